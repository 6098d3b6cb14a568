"""Synchronous training rounds: CGA, compressed CGA, and momentum DPSGD.

Each round function maps a snapshot of all agent states to the next
snapshot.  All reads use round-start values, so agents can be processed
in any order (or concurrently via the mapper argument) without changing
the result; results are committed in ascending agent index.

CGA: every agent j collects cross-gradients (each neighbour l evaluates
its own batch at j's parameters), projects its self-gradient onto the
cone positively correlated with all of them, and applies a momentum
step around the gossip average w = sum_l pi_jl x^l.

CompCGA: identical, except every gradient passes through sign
compression with a persistent error-feedback buffer before entering
the projection.

DPMSGD: momentum step on the raw self-gradient around the same gossip
average; no cross-gradient traffic.
"""

from dataclasses import dataclass

import numpy as np

from .neural import Batch, ModelSpec, loss_and_grad
from .qp import GradientStack, project_gradient
from .topology import MixingMatrix, n_links, neighbors

ALGORITHMS = ("cga", "compcga", "dpmsgd")

FLOAT_BITS = 64  # width of an uncompressed gradient entry


class RoundError(RuntimeError):
    """A round aborted; message carries agent context."""


@dataclass(frozen=True, eq=False)
class AgentState:
    """Parameters and momentum of one agent, plus CompCGA error buffers.

    e_self is the buffer for the agent's own gradient; e_cross[j] is the
    buffer this agent keeps for the cross-gradients it computes on
    neighbour j's parameters.  Both are None outside CompCGA.
    """

    x: np.ndarray
    v: np.ndarray
    e_self: np.ndarray | None = None
    e_cross: dict | None = None


@dataclass(frozen=True)
class Hyper:
    alpha0: float
    beta: float
    decay: float
    batch_size: int
    qp_tol: float = 1e-8
    qp_max_iter: int = 100_000

    def __post_init__(self):
        if not self.alpha0 > 0.0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must lie in (0, 1], got {self.decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not self.qp_tol > 0.0:
            raise ValueError(f"qp_tol must be positive, got {self.qp_tol}")
        if self.qp_max_iter < 0:
            raise ValueError(f"qp_max_iter must be nonnegative, got {self.qp_max_iter}")


@dataclass(frozen=True)
class RoundStats:
    mean_loss: float
    qp_eps_sq: float          # mean over agents of ||gtilde - qp input||^2
    bytes_sent: float
    qp_fast_path_count: int


def step_size(hyper: Hyper, epoch: int) -> float:
    """alpha0 * decay**epoch; epoch counts from 0."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    return hyper.alpha0 * hyper.decay ** epoch


def compress_sign(p: np.ndarray, d: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Scaled sign compression delta = (||p||_1 / d) * sgn(p), err = p - delta.

    sgn(0) = 0, so zero coordinates stay zero and the residual is exact
    by construction.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 1:
        raise ValueError(f"p must be a nonempty vector, got shape {p.shape}")
    if d is None:
        d = p.shape[0]
    elif d != p.shape[0]:
        raise ValueError(f"d={d} does not match vector length {p.shape[0]}")
    delta = (np.abs(p).sum() / d) * np.sign(p)
    return delta, p - delta


def comm_cost(algorithm: str, m_s: int, n_b: int, b: int = FLOAT_BITS):
    """Per-round communication payload in parameter units.

    cga sends parameters out and gradients back over every directed
    link: 2 * m_s * n_b.  dpmsgd sends parameters only: m_s * n_b.
    compcga sends sign-compressed payloads: 2 * m_s * n_b / b for
    b-bit floats.  The compute-cost term of the accounting is excluded.
    Integral values are returned as int.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}, expected one of {ALGORITHMS}")
    if m_s < 1:
        raise ValueError(f"m_s must be positive, got {m_s}")
    if n_b < 0:
        raise ValueError(f"n_b must be nonnegative, got {n_b}")
    if b < 1:
        raise ValueError(f"b must be positive, got {b}")
    if algorithm == "dpmsgd":
        return m_s * n_b
    full = 2 * m_s * n_b
    if algorithm == "cga":
        return full
    return full // b if full % b == 0 else full / b


def init_states(mixing: MixingMatrix, d: int, algorithm: str,
                x0: np.ndarray) -> list[AgentState]:
    """All agents start at the shared x0 with zero momentum and buffers."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}, expected one of {ALGORITHMS}")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (d,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({d},)")
    states = []
    for j in range(mixing.n_agents):
        if algorithm == "compcga":
            e_self = np.zeros(d)
            e_cross = {int(l): np.zeros(d) for l in neighbors(mixing, j)}
        else:
            e_self, e_cross = None, None
        states.append(AgentState(x=x0.copy(), v=np.zeros(d), e_self=e_self,
                                 e_cross=e_cross))
    return states


def _check_round_inputs(model: ModelSpec, states, mixing: MixingMatrix, batches):
    n = mixing.n_agents
    if len(states) != n:
        raise ValueError(f"{len(states)} agent states for {n} agents")
    if len(batches) != n:
        raise ValueError(f"{len(batches)} batches for {n} agents")
    d = states[0].x.shape[0]
    for j, st in enumerate(states):
        if st.x.shape != (d,) or st.v.shape != (d,):
            raise ValueError(f"agent {j} state dimensions disagree")
    return n, d


def _mix(states, mixing: MixingMatrix) -> np.ndarray:
    """Gossip averages w_j = sum_l pi_jl x_l from the round snapshot."""
    stack = np.stack([st.x for st in states])
    return mixing.weights @ stack


def cga_round(model: ModelSpec, states: list, mixing: MixingMatrix,
              batches: list, hyper: Hyper, alpha: float,
              mapper=map) -> tuple[list, RoundStats]:
    """One synchronous cross-gradient aggregation round."""
    n, d = _check_round_inputs(model, states, mixing, batches)
    mixed = _mix(states, mixing)
    neigh = [neighbors(mixing, j) for j in range(n)]

    def work(j):
        st = states[j]
        loss, g_self = loss_and_grad(model, st.x, batches[j])
        rows = np.empty((len(neigh[j]), d))
        for i, l in enumerate(neigh[j]):
            _, rows[i] = loss_and_grad(model, st.x, batches[l])
        try:
            gtilde, report = project_gradient(
                GradientStack(g=g_self, G=rows),
                tol=hyper.qp_tol, max_iter=hyper.qp_max_iter)
        except ValueError as err:
            raise RoundError(f"agent {j}: QP failed: {err}") from err
        eps_sq = float(np.sum((gtilde - g_self) ** 2))
        return loss, gtilde, eps_sq, report.fast_path

    results = list(mapper(work, range(n)))

    new_states = []
    for j, (loss, gtilde, eps_sq, fast) in enumerate(results):
        v_new = hyper.beta * states[j].v - alpha * gtilde
        new_states.append(AgentState(x=mixed[j] + v_new, v=v_new))
    stats = RoundStats(
        mean_loss=float(np.mean([r[0] for r in results])),
        qp_eps_sq=float(np.mean([r[2] for r in results])),
        bytes_sent=comm_cost("cga", d, n_links(mixing)),
        qp_fast_path_count=sum(1 for r in results if r[3]),
    )
    return new_states, stats


def dpmsgd_round(model: ModelSpec, states: list, mixing: MixingMatrix,
                 batches: list, hyper: Hyper, alpha: float,
                 mapper=map) -> tuple[list, RoundStats]:
    """One momentum DPSGD round: gossip average plus local momentum step."""
    n, d = _check_round_inputs(model, states, mixing, batches)
    mixed = _mix(states, mixing)

    def work(j):
        return loss_and_grad(model, states[j].x, batches[j])

    results = list(mapper(work, range(n)))

    new_states = []
    for j, (loss, g_self) in enumerate(results):
        v_new = hyper.beta * states[j].v - alpha * g_self
        new_states.append(AgentState(x=mixed[j] + v_new, v=v_new))
    stats = RoundStats(
        mean_loss=float(np.mean([r[0] for r in results])),
        qp_eps_sq=0.0,
        bytes_sent=comm_cost("dpmsgd", d, n_links(mixing)),
        qp_fast_path_count=0,
    )
    return new_states, stats


def compcga_round(model: ModelSpec, states: list, mixing: MixingMatrix,
                  batches: list, hyper: Hyper, alpha: float,
                  mapper=map) -> tuple[list, RoundStats]:
    """One CGA round with error-feedback sign compression.

    Agent l owns the buffer for each cross-gradient it computes on
    neighbour j's parameters (states[l].e_cross[j]); the compressed
    value enters j's constraint stack and l keeps the residual.  The
    self buffer e_self is folded in before compression and updated from
    the same round's residual.
    """
    n, d = _check_round_inputs(model, states, mixing, batches)
    for j, st in enumerate(states):
        if st.e_self is None or st.e_cross is None:
            raise ValueError(f"agent {j} lacks error buffers; use init_states('compcga')")
    mixed = _mix(states, mixing)
    neigh = [neighbors(mixing, j) for j in range(n)]

    def work(j):
        st = states[j]
        loss, g_self = loss_and_grad(model, st.x, batches[j])
        p_self = g_self + st.e_self
        delta_self, e_self_new = compress_sign(p_self)

        rows = np.empty((len(neigh[j]), d))
        cross_err = {}
        for i, l in enumerate(neigh[j]):
            # neighbour l evaluates its batch at j's parameters and
            # compresses with the buffer it keeps for j
            _, g_cross = loss_and_grad(model, st.x, batches[l])
            delta, err = compress_sign(g_cross + states[l].e_cross[j])
            rows[i] = delta
            cross_err[l] = err
        try:
            gtilde, report = project_gradient(
                GradientStack(g=delta_self, G=rows),
                tol=hyper.qp_tol, max_iter=hyper.qp_max_iter)
        except ValueError as err:
            raise RoundError(f"agent {j}: QP failed: {err}") from err
        eps_sq = float(np.sum((gtilde - delta_self) ** 2))
        return loss, gtilde, eps_sq, report.fast_path, e_self_new, cross_err

    results = list(mapper(work, range(n)))

    # Residuals for e^{jl} were produced while processing agent j but
    # belong to the computing neighbour l; regroup before committing.
    new_cross = [{} for _ in range(n)]
    for j, res in enumerate(results):
        for l, err in res[5].items():
            new_cross[l][j] = err

    new_states = []
    for j, (loss, gtilde, eps_sq, fast, e_self_new, _) in enumerate(results):
        v_new = hyper.beta * states[j].v - alpha * gtilde
        new_states.append(AgentState(x=mixed[j] + v_new, v=v_new,
                                     e_self=e_self_new, e_cross=new_cross[j]))
    stats = RoundStats(
        mean_loss=float(np.mean([r[0] for r in results])),
        qp_eps_sq=float(np.mean([r[2] for r in results])),
        bytes_sent=comm_cost("compcga", d, n_links(mixing)),
        qp_fast_path_count=sum(1 for r in results if r[3]),
    )
    return new_states, stats


ROUND_FUNCTIONS = {
    "cga": cga_round,
    "compcga": compcga_round,
    "dpmsgd": dpmsgd_round,
}
