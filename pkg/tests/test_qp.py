import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossgrad.qp import (DualSolution, GradientStack, brute_force_projection,
                          kkt_report, project_gradient, recover_projection,
                          solve_dual)


def stack(g, G):
    g = np.asarray(g, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, len(g))
    return GradientStack(g=g, G=G)


def objective(z, g):
    return 0.5 * float(np.sum((z - g) ** 2))


def test_dual_single_constraint():
    # dual is min over u>=0 of u^2/2 - u, solved at u = 1
    sol = solve_dual(stack([1.0, 0.0], [[-1.0, 0.0]]))
    assert sol.u.shape == (1,)
    assert abs(sol.u[0] - 1.0) <= 1e-7


def test_dual_already_feasible():
    sol = solve_dual(stack([1.0, 1.0], [[1.0, 0.0]]))
    assert sol.u[0] == 0.0
    assert sol.residual <= 1e-8


def test_dual_orthogonal_rows():
    # G G^T = I decouples: u = max(0, -Gg) = (1, 0)
    sol = solve_dual(stack([0.0, -1.0], [[0.0, 1.0], [1.0, 0.0]]))
    assert np.abs(sol.u - np.array([1.0, 0.0])).max() <= 1e-7


def test_dual_empty_stack():
    sol = solve_dual(stack([3.0], np.zeros((0, 1))))
    assert sol.u.shape == (0,)
    assert sol.iterations == 0 and sol.residual == 0.0


def test_dual_rejects_bad_inputs():
    with pytest.raises(ValueError):
        GradientStack(g=np.array([1.0, np.nan]), G=np.zeros((0, 2)))
    with pytest.raises(ValueError):
        GradientStack(g=np.array([1.0]), G=np.array([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        solve_dual(stack([1.0, 0.0], [[-1.0, 0.0]]), tol=0.0)


def test_nonconvergence_reports_residual():
    # both constraints violated, non-symmetric, so one step cannot land exactly
    s = stack([-1.0, 0.0], [[2.0, 1.0], [1.0, 3.0]])
    sol = solve_dual(s, tol=1e-15, max_iter=1)
    assert isinstance(sol, DualSolution)
    assert sol.iterations == 1
    assert sol.residual > 1e-15  # surfaced, not raised
    full = solve_dual(s, tol=1e-12)
    assert full.residual <= 1e-12


def test_recover_projection_examples():
    assert np.array_equal(
        recover_projection(stack([1.0, 0.0], [[-1.0, 0.0]]), np.array([1.0])),
        np.array([0.0, 0.0]))
    g = np.array([4.0, 5.0, 6.0])
    assert np.array_equal(recover_projection(stack(g, np.zeros((0, 3))), np.zeros(0)), g)
    assert np.array_equal(
        recover_projection(stack([0.0, -1.0], [[0.0, 1.0], [1.0, 0.0]]),
                           np.array([1.0, 0.0])),
        np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        recover_projection(stack([1.0], [[1.0]]), np.zeros(2))


def test_project_fast_path_returns_g_bit_identically():
    g = np.array([0.3333333333333333, -1.7, 2.5e-13])
    G = np.array([[0.1, 0.0, 0.0], [0.2, -0.1, 1.0]])
    z, report = project_gradient(GradientStack(g=g, G=G))
    gg = G @ g
    assert gg.min() >= 0.0  # sanity: instance really is feasible
    assert report.fast_path
    assert z.tobytes() == g.tobytes()
    assert report.iterations == 0
    assert report.stationarity == 0.0 and report.complementary_slackness == 0.0


def test_project_no_constraints():
    z, report = project_gradient(stack([3.0], np.zeros((0, 1))))
    assert np.array_equal(z, np.array([3.0]))
    assert report.fast_path
    assert (report.primal_feasibility, report.dual_feasibility,
            report.complementary_slackness, report.stationarity) == (0, 0, 0, 0)


def test_project_single_violated_constraint():
    z, report = project_gradient(stack([1.0, 0.0], [[-1.0, 0.0]]))
    assert np.abs(z).max() <= 1e-7
    assert report.primal_feasibility >= -1e-8
    assert not report.fast_path
    assert report.within(1e-8)


def test_oracle_examples():
    assert np.array_equal(
        brute_force_projection(stack([1.0, 0.0], np.zeros((0, 2)))),
        np.array([1.0, 0.0]))
    z = brute_force_projection(stack([0.0, -1.0], [[0.0, 1.0], [1.0, 0.0]]))
    assert np.abs(z).max() <= 1e-9
    with pytest.raises(ValueError):
        brute_force_projection(stack(np.ones(3), np.ones((11, 3))))


def test_zero_rows_in_stack():
    # all-zero constraint rows satisfy Gg >= 0 trivially
    z, report = project_gradient(stack([1.0, -2.0], np.zeros((3, 2))))
    assert np.array_equal(z, np.array([1.0, -2.0]))
    assert report.fast_path


def test_scale_equivariance():
    # the dual residual is quadratic in the instance scale, so the scaled
    # run gets tol * c^2 to be solved to the same relative accuracy
    rng = np.random.Generator(np.random.Philox(11))
    for _ in range(25):
        d = int(rng.integers(1, 6))
        m = int(rng.integers(0, 5))
        g = rng.uniform(-1, 1, d)
        G = rng.uniform(-1, 1, (m, d))
        z1, _ = project_gradient(GradientStack(g=g, G=G), tol=1e-13)
        for c in (17.0, 1e-3):
            zc, _ = project_gradient(GradientStack(g=c * g, G=c * G),
                                     tol=1e-13 * c * c)
            tol = 1e-9 * c * max(1.0, float(np.abs(z1).max()))
            assert np.abs(zc - c * z1).max() <= tol


def test_solver_matches_oracle_and_kkt_bounds():
    # same instance family as the acceptance corpus, smaller count
    rng = np.random.Generator(np.random.Philox(5))
    tol = 1e-8
    for _ in range(60):
        d = int(rng.integers(1, 6))
        m = int(rng.integers(0, 5))
        s = GradientStack(g=rng.uniform(-1, 1, d), G=rng.uniform(-1, 1, (m, d)))
        z, report = project_gradient(s, tol=tol)
        z_star = brute_force_projection(s)
        assert abs(objective(z, s.g) - objective(z_star, s.g)) <= 1e-6
        assert report.within(tol)


def test_descent_direction_against_oracle():
    # whenever the oracle keeps a nonnegative inner product with g, so must we
    rng = np.random.Generator(np.random.Philox(6))
    checked = 0
    for _ in range(80):
        d = int(rng.integers(2, 6))
        m = int(rng.integers(1, 5))
        s = GradientStack(g=rng.uniform(-1, 1, d), G=rng.uniform(-1, 1, (m, d)))
        z_star = brute_force_projection(s)
        if float(z_star @ s.g) >= 0.0:
            z, _ = project_gradient(s)
            assert float(z @ s.g) >= -1e-7
            checked += 1
    assert checked > 20


@given(st.integers(1, 5), st.integers(0, 4), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_kkt_invariants_property(d, m, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    s = GradientStack(g=rng.uniform(-1, 1, d), G=rng.uniform(-1, 1, (m, d)))
    tol = 1e-8
    z, report = project_gradient(s, tol=tol)
    assert report.primal_feasibility >= -10 * tol
    assert report.dual_feasibility >= 0.0
    assert report.complementary_slackness <= 10 * tol
    assert report.stationarity <= 1e-12
    assert np.isfinite(z).all()


def test_kkt_report_consistency():
    s = stack([1.0, 0.0], [[-1.0, 0.0]])
    sol = solve_dual(s)
    z = recover_projection(s, sol.u)
    report = kkt_report(s, sol.u, z, sol.iterations, sol.residual, False)
    assert report.stationarity == 0.0  # recovery formula re-evaluated
    assert report.iterations == sol.iterations
