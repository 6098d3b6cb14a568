"""Quadratic-program projection of a gradient onto a descent cone.

Given a local gradient g and a stack G of cross gradients, find the
point z closest to g that has nonnegative inner product with every row
of G.  The primal problem

    min_z  0.5 ||z - g||^2   s.t.  G z >= 0

is solved through its nonnegative dual

    min_{u >= 0}  0.5 u' G G' u + g' G' u

with the primal recovered as z = G' u + g.  The dual is a bound
constrained convex QP in m variables (m = number of stacked gradients,
typically the agent count), much smaller than the d model parameters.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000

# Brute force enumeration walks all 2**m active sets; keep it small.
ORACLE_MAX_ROWS = 10


@dataclass(frozen=True)
class GradientStack:
    """A gradient g of shape (d,) and constraint rows G of shape (m, d).

    m may be zero, in which case the projection is the identity.
    """

    g: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=np.float64)
        G = np.asarray(self.G, dtype=np.float64)
        if g.ndim != 1:
            raise ValueError(f"g must be 1-D, got shape {g.shape}")
        if G.ndim != 2:
            raise ValueError(f"G must be 2-D, got shape {G.shape}")
        if G.shape[0] > 0 and G.shape[1] != g.shape[0]:
            raise ValueError(f"G has {G.shape[1]} columns but g has {g.shape[0]} entries")
        if not np.isfinite(g).all() or not np.isfinite(G).all():
            raise ValueError("gradient stack contains non-finite values")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "G", G.reshape(G.shape[0], g.shape[0]))

    @property
    def m(self) -> int:
        return self.G.shape[0]

    @property
    def d(self) -> int:
        return self.g.shape[0]


@dataclass(frozen=True)
class DualSolution:
    u: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True)
class KktReport:
    """Optimality diagnostics for a projected gradient.

    primal_feasibility: min_i (G z)_i, should be >= -10 * tol.
    dual_feasibility: min_i u_i, should be >= 0.
    complementary_slackness: max_i |u_i (G z)_i|, should be <= 10 * tol.
    stationarity: ||z - (G' u + g)||, zero by construction.
    All four are 0.0 when the stack has no constraint rows.
    """

    primal_feasibility: float
    dual_feasibility: float
    complementary_slackness: float
    stationarity: float
    fast_path: bool
    iterations: int
    residual: float

    def within(self, tol: float) -> bool:
        return (
            self.primal_feasibility >= -10.0 * tol
            and self.dual_feasibility >= 0.0
            and self.complementary_slackness <= 10.0 * tol
            and self.stationarity <= 1e-12
        )


def solve_dual(stack: GradientStack, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER) -> DualSolution:
    """Minimise the dual QP over u >= 0 by accelerated projected gradient.

    Runs Nesterov-accelerated steps with adaptive restart (momentum is
    dropped whenever it points uphill), step size 1/L with L an upper
    bound on ||G G'||_2.  Stops when both the projected-gradient
    residual and the complementarity residual fall below tol.  On
    hitting max_iter the best iterate is returned with its residual;
    no exception is raised.
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 0:
        raise ValueError(f"max_iter must be nonnegative, got {max_iter}")
    m = stack.m
    if m == 0:
        return DualSolution(u=np.zeros(0), iterations=0, residual=0.0)

    M = stack.G @ stack.G.T
    c = stack.G @ stack.g
    L = float(np.abs(M).sum(axis=1).max())
    if L == 0.0:
        # All constraint rows are zero; u = 0 solves the dual exactly.
        res = float(np.abs(np.minimum(c, 0.0)).max())
        return DualSolution(u=np.zeros(m), iterations=0, residual=res)
    step = 1.0 / L

    u = np.zeros(m)
    y = u
    t = 1.0
    res = np.inf
    for it in range(max_iter + 1):
        grad = M @ u + c
        res = max(
            float(np.abs(u - np.maximum(0.0, u - grad)).max()),
            float(np.abs(u * grad).max()),
        )
        if res <= tol or it == max_iter:
            return DualSolution(u=u, iterations=it, residual=res)
        grad_y = M @ y + c
        u_new = np.maximum(0.0, y - step * grad_y)
        if (y - u_new) @ (u_new - u) > 0.0:
            t = 1.0
            y = u_new
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = u_new + ((t - 1.0) / t_next) * (u_new - u)
            t = t_next
        u = u_new
    return DualSolution(u=u, iterations=max_iter, residual=res)


def recover_projection(stack: GradientStack, u: np.ndarray) -> np.ndarray:
    """Map a dual point to its primal candidate z = G' u + g."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (stack.m,):
        raise ValueError(f"u has shape {u.shape}, expected ({stack.m},)")
    if stack.m == 0:
        return stack.g.copy()
    return stack.G.T @ u + stack.g


def kkt_report(stack: GradientStack, u: np.ndarray, z: np.ndarray,
               iterations: int, residual: float, fast_path: bool) -> KktReport:
    if stack.m == 0:
        return KktReport(0.0, 0.0, 0.0, 0.0, fast_path, iterations, residual)
    gz = stack.G @ z
    # Re-evaluates the recovery formula, so stationarity is exactly zero
    # whenever z came from recover_projection with this u.
    stat = float(np.linalg.norm(z - (stack.G.T @ u + stack.g)))
    return KktReport(
        primal_feasibility=float(gz.min()),
        dual_feasibility=float(u.min()),
        complementary_slackness=float(np.abs(u * gz).max()),
        stationarity=stat,
        fast_path=fast_path,
        iterations=iterations,
        residual=residual,
    )


def project_gradient(stack: GradientStack, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> tuple[np.ndarray, KktReport]:
    """Project g onto {z : G z >= 0} measured from g itself.

    When g already satisfies every constraint (within tol) the solver is
    skipped and g is returned unchanged, bit for bit.  Otherwise the
    dual is solved and the primal recovered.
    """
    if stack.m == 0:
        return stack.g.copy(), kkt_report(stack, np.zeros(0), stack.g, 0, 0.0, True)
    if float((stack.G @ stack.g).min()) >= -tol:
        z = stack.g.copy()
        return z, kkt_report(stack, np.zeros(stack.m), z, 0, 0.0, True)
    sol = solve_dual(stack, tol=tol, max_iter=max_iter)
    z = recover_projection(stack, sol.u)
    return z, kkt_report(stack, sol.u, z, sol.iterations, sol.residual, False)


def brute_force_projection(stack: GradientStack) -> np.ndarray:
    """Exact projection by enumerating active sets; oracle for tests.

    For each subset S of constraint rows, project g onto the nullspace
    of G[S] and keep the feasible candidate closest to g.  Exponential
    in m, refuses m > ORACLE_MAX_ROWS.
    """
    m = stack.m
    if m > ORACLE_MAX_ROWS:
        raise ValueError(f"oracle limited to m <= {ORACLE_MAX_ROWS}, got {m}")
    g, G = stack.g, stack.G
    slack = 1e-9 * (1.0 + float(np.abs(g).max(initial=0.0)))
    best = None
    best_dist = np.inf
    for size in range(m + 1):
        for rows in combinations(range(m), size):
            if rows:
                A = G[list(rows)]
                z = g - np.linalg.pinv(A) @ (A @ g)
            else:
                z = g.copy()
            if m and float((G @ z).min()) < -slack:
                continue
            dist = float(np.linalg.norm(z - g))
            if dist < best_dist:
                best = z
                best_dist = dist
    assert best is not None  # z from the full active set is always feasible
    return best
