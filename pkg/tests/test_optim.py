import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossgrad.data import minibatches, partition, synth_blobs
from crossgrad.neural import Batch, ModelSpec, init_params, loss_and_grad, param_count
from crossgrad.optim import (AgentState, Hyper, RoundStats, cga_round, comm_cost,
                             compcga_round, compress_sign, dpmsgd_round,
                             init_states, step_size)
from crossgrad.topology import build_topology

HYPER = Hyper(alpha0=0.05, beta=0.9, decay=0.99, batch_size=4)


def make_setup(n_agents, topology="full", seed=0, algorithm="cga"):
    """Model, mixing, shared init, and a per-agent batch supply."""
    spec = ModelSpec((3, 5, 2))
    mixing = build_topology(topology, n_agents)
    x0 = init_params(spec, seed=seed)
    states = init_states(mixing, param_count(spec), algorithm, x0)
    ds = synth_blobs(2, 3, 20 * max(1, n_agents), seed=seed + 1)
    return spec, mixing, states, ds


def batches_for(ds, parts, epoch, bs=4):
    return [minibatches(ds, idx, bs, epoch, seed=j)[0]
            for j, idx in enumerate(parts.assignments)]


def test_hyper_validation():
    with pytest.raises(ValueError):
        Hyper(alpha0=0.0, beta=0.9, decay=1.0, batch_size=4)
    with pytest.raises(ValueError):
        Hyper(alpha0=0.1, beta=1.0, decay=1.0, batch_size=4)
    with pytest.raises(ValueError):
        Hyper(alpha0=0.1, beta=0.5, decay=0.0, batch_size=4)
    with pytest.raises(ValueError):
        Hyper(alpha0=0.1, beta=0.5, decay=0.9, batch_size=0)


def test_step_size_schedule():
    h = Hyper(alpha0=0.01, beta=0.98, decay=0.981, batch_size=32)
    assert step_size(h, 0) == 0.01
    assert abs(step_size(h, 1) - 0.00981) <= 1e-18
    const = Hyper(alpha0=0.01, beta=0.98, decay=1.0, batch_size=32)
    assert step_size(const, 57) == 0.01
    with pytest.raises(ValueError):
        step_size(h, -1)


def test_compress_sign_examples():
    delta, err = compress_sign(np.array([2.0, -1.0, 1.0]), 3)
    assert np.array_equal(delta, np.array([4.0 / 3.0, -4.0 / 3.0, 4.0 / 3.0]))
    assert np.array_equal(err, np.array([2.0, -1.0, 1.0]) - delta)

    delta0, err0 = compress_sign(np.zeros(4))
    assert np.array_equal(delta0, np.zeros(4))
    assert np.array_equal(err0, np.zeros(4))

    c = np.full(5, 0.3)
    delta_c, err_c = compress_sign(c)
    assert np.array_equal(delta_c, c)
    assert np.array_equal(err_c, np.zeros(5))

    with pytest.raises(ValueError):
        compress_sign(np.array([1.0, 2.0]), 3)
    with pytest.raises(ValueError):
        compress_sign(np.zeros((2, 2)))


@given(st.integers(1, 40), st.integers(0, 5000))
@settings(max_examples=60, deadline=None)
def test_compress_sign_identity_property(dim, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    p = rng.normal(0, 3.0, dim)
    p[rng.uniform(size=dim) < 0.2] = 0.0
    delta, err = compress_sign(p)
    # e is defined as p - delta, so the reconstruction is exact
    assert np.array_equal(p - delta - err, np.zeros(dim))
    assert len(np.unique(np.abs(delta[delta != 0.0]))) <= 1


def test_comm_cost_table():
    assert comm_cost("cga", 1000, 10) == 20000
    assert comm_cost("dpmsgd", 1000, 10) == 10000
    assert comm_cost("compcga", 1000, 10, 32) == 625
    assert comm_cost("compcga", 1000, 10) == 312.5  # 64-bit default
    assert comm_cost("cga", 7, 3) == 2 * comm_cost("dpmsgd", 7, 3)
    assert comm_cost("compcga", 7, 3, 64) == comm_cost("cga", 7, 3) / 64
    with pytest.raises(ValueError):
        comm_cost("sgp", 10, 10)
    with pytest.raises(ValueError):
        comm_cost("cga", 0, 10)


def test_init_states_buffers():
    mixing = build_topology("ring", 4)
    x0 = np.arange(5.0)
    plain = init_states(mixing, 5, "cga", x0)
    assert all(st.e_self is None and st.e_cross is None for st in plain)
    assert all(np.array_equal(st.x, x0) for st in plain)
    assert plain[0].x is not plain[1].x

    comp = init_states(mixing, 5, "compcga", x0)
    for j, st_ in enumerate(comp):
        assert np.array_equal(st_.e_self, np.zeros(5))
        assert sorted(st_.e_cross) == sorted({(j - 1) % 4, (j + 1) % 4})
        assert all(np.array_equal(v, np.zeros(5)) for v in st_.e_cross.values())


def test_one_step_arithmetic_beta_zero():
    # v = -alpha * gtilde, x = w + v with all pieces pinned by hand
    spec = ModelSpec((1, 2))  # d = 4: w (1x2) and b (2)
    mixing = build_topology("full", 1)
    st0 = AgentState(x=np.zeros(4), v=np.zeros(4))
    batch = Batch(inputs=np.array([[1.0]]), labels=np.array([0]))
    hyper = Hyper(alpha0=0.1, beta=0.0, decay=1.0, batch_size=1)
    new, stats = cga_round(spec, [st0], mixing, [batch], hyper, alpha=0.1)
    _, g = loss_and_grad(spec, np.zeros(4), batch)
    assert np.array_equal(new[0].x, -0.1 * g)
    assert np.array_equal(new[0].v, -0.1 * g)
    assert stats.qp_eps_sq == 0.0 and stats.qp_fast_path_count == 1


def test_cga_single_agent_is_momentum_sgd():
    spec, mixing, states, ds = make_setup(1)
    part = partition(ds, 1, "iid", seed=0)
    x = states[0].x.copy()
    v = np.zeros_like(x)
    for k in range(100):
        batch = batches_for(ds, part, epoch=k)[0:1]
        states, _ = cga_round(spec, states, mixing, batch, HYPER, alpha=0.05)
        _, g = loss_and_grad(spec, x, batch[0])
        v = HYPER.beta * v - 0.05 * g
        x = x + v
        assert states[0].x.tobytes() == x.tobytes()
        assert states[0].v.tobytes() == v.tobytes()


def test_full_symmetry_cga_equals_dpmsgd():
    # identical data, batches and init: cross-gradients equal the self
    # gradient, the QP fast path fires, and both updates coincide bitwise
    spec, mixing, states_a, ds = make_setup(4)
    states_b = [AgentState(x=s.x.copy(), v=s.v.copy()) for s in states_a]
    idx = np.arange(ds.n_samples)
    for k in range(50):
        shared = minibatches(ds, idx, 8, epoch=k, seed=99)[0]
        batches = [shared] * 4
        states_a, stats_a = cga_round(spec, states_a, mixing, batches, HYPER, 0.05)
        states_b, stats_b = dpmsgd_round(spec, states_b, mixing, batches, HYPER, 0.05)
        for sa, sb in zip(states_a, states_b):
            assert sa.x.tobytes() == sb.x.tobytes()
            assert sa.v.tobytes() == sb.v.tobytes()
        assert stats_a.qp_fast_path_count == 4
        assert stats_a.qp_eps_sq == 0.0


def test_rounds_are_snapshot_pure():
    # processing order must not matter: run the same round with a mapper
    # that evaluates agents in reverse
    def reverse_mapper(fn, it):
        items = list(it)
        results = {j: fn(j) for j in reversed(items)}
        return [results[j] for j in items]

    for round_fn, alg in [(cga_round, "cga"), (compcga_round, "compcga"),
                          (dpmsgd_round, "dpmsgd")]:
        spec, mixing, states, ds = make_setup(5, topology="ring", algorithm=alg)
        part = partition(ds, 5, "iid", seed=1)
        batches = batches_for(ds, part, epoch=0)
        fwd, stats_f = round_fn(spec, states, mixing, batches, HYPER, 0.05)
        rev, stats_r = round_fn(spec, states, mixing, batches, HYPER, 0.05,
                                mapper=reverse_mapper)
        for a, b in zip(fwd, rev):
            assert a.x.tobytes() == b.x.tobytes()
        assert stats_f == stats_r


def test_dpmsgd_alpha_zero_consensus_decay():
    # pure averaging: deviation from the mean contracts by rho_sqrt^2
    # per round in the worst case; with distinct starts it tracks closely
    spec = ModelSpec((2, 2))
    d = param_count(spec)
    mixing = build_topology("ring", 4)
    rho = 1.0 / 3.0
    rng = np.random.Generator(np.random.Philox(8))
    states = [AgentState(x=rng.normal(0, 1, d), v=np.zeros(d)) for _ in range(4)]
    batch = Batch(inputs=np.array([[0.1, 0.2]]), labels=np.array([0]))
    hyper = Hyper(alpha0=1e-12, beta=0.0, decay=1.0, batch_size=1)

    def cerr(sts):
        stack = np.stack([s.x for s in sts])
        centered = stack - stack.mean(axis=0)
        return float(np.mean(np.sum(centered ** 2, axis=1)))

    errs = [cerr(states)]
    for _ in range(6):
        # alpha=0 exactly: reuse the hyper but pass zero step
        states, _ = dpmsgd_round(spec, states, mixing, [batch] * 4, hyper, 0.0)
        errs.append(cerr(states))
    # ring-4 contracts every non-mean mode by exactly rho^2 = 1/9
    for before, after in zip(errs, errs[1:]):
        assert after <= before * rho ** 2 * (1.0 + 1e-12)
    assert errs[3] / errs[2] == pytest.approx(rho ** 2, rel=1e-9)


def test_dpmsgd_identical_agents_stay_identical():
    spec, mixing, states, ds = make_setup(3)
    idx = np.arange(ds.n_samples)
    for k in range(10):
        shared = minibatches(ds, idx, 8, epoch=k, seed=5)[0]
        states, _ = dpmsgd_round(spec, states, mixing, [shared] * 3, HYPER, 0.05)
    for st_ in states[1:]:
        assert st_.x.tobytes() == states[0].x.tobytes()


def test_compcga_lossless_on_constant_magnitude_gradients():
    # if |p| has equal coordinates, delta == p and the buffers stay zero
    delta, err = compress_sign(np.array([0.5, -0.5, 0.5, -0.5]))
    assert np.array_equal(delta, np.array([0.5, -0.5, 0.5, -0.5]))
    assert not err.any()


def test_compcga_error_buffers_update_and_route():
    spec, mixing, states, ds = make_setup(3, algorithm="compcga")
    part = partition(ds, 3, "iid", seed=2)
    batches = batches_for(ds, part, epoch=0)
    new_states, stats = compcga_round(spec, states, mixing, batches, HYPER, 0.05)
    assert isinstance(stats, RoundStats)
    for j, st_ in enumerate(new_states):
        # buffer e^{jl} lives at the computing agent, keyed by the
        # parameter owner; full graph on 3 agents keeps two of them
        assert sorted(st_.e_cross) == sorted(set(range(3)) - {j})
        assert st_.e_self.shape == st_.x.shape
        assert st_.e_self.any()  # real gradients compress lossily

    # second round must consume the buffers: replaying it with zeroed
    # buffers changes the outcome
    second, _ = compcga_round(spec, new_states, mixing, batches, HYPER, 0.05)
    wiped = [AgentState(x=s.x, v=s.v, e_self=np.zeros_like(s.e_self),
                        e_cross={k: np.zeros_like(v) for k, v in s.e_cross.items()})
             for s in new_states]
    second_wiped, _ = compcga_round(spec, wiped, mixing, batches, HYPER, 0.05)
    assert any(a.x.tobytes() != b.x.tobytes() for a, b in zip(second, second_wiped))


def test_compcga_requires_buffers():
    spec, mixing, states, ds = make_setup(2, algorithm="cga")
    part = partition(ds, 2, "iid", seed=0)
    with pytest.raises(ValueError):
        compcga_round(spec, states, mixing, batches_for(ds, part, 0), HYPER, 0.05)


def test_round_bytes_match_comm_cost():
    d = param_count(ModelSpec((3, 5, 2)))
    for alg, round_fn in [("cga", cga_round), ("compcga", compcga_round),
                          ("dpmsgd", dpmsgd_round)]:
        spec, mixing, states, ds = make_setup(4, topology="ring", algorithm=alg)
        part = partition(ds, 4, "iid", seed=1)
        _, stats = round_fn(spec, states, mixing, batches_for(ds, part, 0), HYPER, 0.05)
        assert stats.bytes_sent == comm_cost(alg, d, 8)
    assert comm_cost("cga", d, 8) == 2 * comm_cost("dpmsgd", d, 8)
    assert comm_cost("compcga", d, 8) == comm_cost("cga", d, 8) / 64


def test_round_validates_shapes():
    spec, mixing, states, ds = make_setup(3)
    part = partition(ds, 3, "iid", seed=0)
    batches = batches_for(ds, part, 0)
    with pytest.raises(ValueError):
        cga_round(spec, states[:2], mixing, batches, HYPER, 0.05)
    with pytest.raises(ValueError):
        cga_round(spec, states, mixing, batches[:2], HYPER, 0.05)
