import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lossy_pushsum import _kernels
from lossy_pushsum.protocol import (
    AgentState,
    DegenerateStateError,
    EdgeEvent,
    EventStream,
    ProtocolParams,
    SystemState,
    consensus_step,
    fit_decay_rate,
    push_sum_step,
    run_to_consensus,
    spread,
    trajectory,
)

EPS = np.finfo(float).eps
HALF = ProtocolParams(2, 0.0, 0.5)


def pair_state(*xw):
    return SystemState(tuple(AgentState(x, w) for x, w in xw))


def xw(state):
    return [(a.x, a.w) for a in state.agents]


# --- single-step examples ---------------------------------------------------

def test_pushsum_delivered_example():
    s = push_sum_step(pair_state((-1, 1), (1, 1)), HALF, EdgeEvent(0, 1, True))
    assert xw(s) == [(-0.5, 0.5), (0.5, 1.5)]
    assert s.t == 1


def test_pushsum_lost_example():
    s = push_sum_step(pair_state((-1, 1), (1, 1)), HALF, EdgeEvent(0, 1, False))
    assert xw(s) == [(-0.5, 0.5), (1, 1)]


def test_consensus_examples():
    s0 = SystemState.from_values([-1, 1])
    assert list(consensus_step(s0, HALF, EdgeEvent(0, 1, True)).values) == [-1, 0]
    lost = consensus_step(s0, HALF, EdgeEvent(0, 1, False))
    assert list(lost.values) == [-1, 1] and lost.t == 1
    c = SystemState.from_values([0.3, 0.3])
    for ev in (EdgeEvent(0, 1, True), EdgeEvent(1, 0, True), EdgeEvent(1, 0, False)):
        assert list(consensus_step(c, HALF, ev).values) == [0.3, 0.3]


def test_spread_examples():
    s0 = pair_state((-1, 1), (1, 1))
    assert spread(s0) == 2
    assert spread(SystemState.from_values([4.0, 4.0, 4.0])) == 0
    s1 = push_sum_step(s0, HALF, EdgeEvent(0, 1, True))
    assert spread(s1) == pytest.approx(4 / 3, abs=1e-15)
    assert spread(pair_state((1, 2), (-5, 1)), "consensus") == 6


def test_spread_rejects_bad_weights():
    with pytest.raises(DegenerateStateError):
        spread(pair_state((1, 0.0), (1, 1)))
    with pytest.raises(DegenerateStateError):
        spread(pair_state((1, np.inf), (1, 1)))


@pytest.mark.parametrize("ev", [EdgeEvent(0, 0, True), EdgeEvent(0, 2, True), EdgeEvent(-1, 0, False)])
def test_invalid_events(ev):
    with pytest.raises(ValueError):
        push_sum_step(SystemState.from_values([0, 1]), HALF, ev)


@pytest.mark.parametrize(
    "kwargs", [dict(n=1, p=0.1), dict(n=2, p=-0.1), dict(n=2, p=1.5), dict(n=2, p=0.1, alpha=0.0),
               dict(n=2, p=0.1, alpha=1.0), dict(n=2, p=0.1, tol=0.0), dict(n=2.5, p=0.1)]
)
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        ProtocolParams(**kwargs)


def test_p_one_rejected_by_runs():
    params = ProtocolParams(2, 1.0)
    with pytest.raises(ValueError):
        run_to_consensus(params, [0.0, 1.0])


# --- properties of one step -------------------------------------------------

values = st.floats(-1e3, 1e3, allow_nan=False)
weights = st.floats(1e-3, 10.0)
alphas = st.floats(0.01, 0.99)


@st.composite
def state_and_event(draw):
    n = draw(st.integers(2, 6))
    agents = tuple(AgentState(draw(values), draw(weights)) for _ in range(n))
    i = draw(st.integers(0, n - 1))
    j = draw(st.integers(0, n - 2))
    j += j >= i
    return SystemState(agents), EdgeEvent(i, j, draw(st.booleans())), draw(alphas)


@given(state_and_event())
def test_pushsum_mass_bookkeeping(case):
    state, ev, a = case
    params = ProtocolParams(state.n, 0.5, a)
    new = push_sum_step(state, params, ev)
    old_w, new_w = state.weights, new.weights
    scale = np.abs(state.values).sum() + 1.0
    if ev.delivered:
        assert new.values.sum() == pytest.approx(state.values.sum(), abs=8 * EPS * scale)
        assert new_w.sum() == pytest.approx(old_w.sum(), rel=8 * EPS)
    else:
        lost = a * old_w[ev.sender]
        assert new_w.sum() == pytest.approx(old_w.sum() - lost, rel=8 * EPS)
        assert new.agents[ev.sender].x == pytest.approx((1 - a) * state.agents[ev.sender].x, rel=2 * EPS)
    untouched = [k for k in range(state.n) if k not in (ev.sender, ev.receiver)]
    for k in untouched:
        assert new.agents[k] == state.agents[k]
    assert np.all(new_w > 0)


@given(state_and_event(), st.sampled_from(["pushsum", "consensus"]))
def test_hull_shrinks_each_step(case, mode):
    state, ev, a = case
    params = ProtocolParams(state.n, 0.5, a)
    if mode == "consensus":
        state = SystemState.from_values(state.values)
        new = consensus_step(state, params, ev)
        r0, r1 = state.values, new.values
    else:
        new = push_sum_step(state, params, ev)
        r0, r1 = state.ratios(), new.ratios()
    slack = 4 * EPS * np.abs(r0).max()
    assert r1.max() <= r0.max() + slack
    assert r1.min() >= r0.min() - slack


# --- event stream -----------------------------------------------------------

def test_stream_block_invariance():
    a = EventStream(5, 0.3, seed=11, trial=4)
    b = EventStream(5, 0.3, seed=11, trial=4)
    chunks = np.vstack([a.uniforms(3), a.uniforms(100), a.uniforms(1)])
    assert np.array_equal(chunks, b.uniforms(104))
    assert a.consumed == 104


def test_streams_differ_by_trial_and_seed():
    base = EventStream(3, 0.2, 1, 0).uniforms(8)
    assert not np.array_equal(base, EventStream(3, 0.2, 1, 1).uniforms(8))
    assert not np.array_equal(base, EventStream(3, 0.2, 2, 0).uniforms(8))


def test_event_distribution():
    n, p, k = 4, 0.3, 240_000
    s, r, d = _kernels.decode(EventStream(n, p, 5).uniforms(k), n, p)
    assert np.all(s != r)
    counts = np.zeros((n, n))
    np.add.at(counts, (s, r), 1)
    expected = k / (n * (n - 1))
    off = counts[~np.eye(n, dtype=bool)]
    # chi-square with 11 dof; 40 is far in the tail
    assert ((off - expected) ** 2 / expected).sum() < 40
    assert abs((~d).mean() - p) < 4 * np.sqrt(p * (1 - p) / k)


# --- compiled kernel vs reference step --------------------------------------

@pytest.mark.parametrize("mode", ["pushsum", "consensus"])
def test_kernel_matches_reference(mode):
    n, steps = 4, 400
    params = ProtocolParams(n, 0.4, 0.3)
    x0 = [3.0, -1.0, 0.5, 2.0]
    state = SystemState.from_values(x0)
    step = push_sum_step if mode == "pushsum" else consensus_step
    for ev in EventStream(n, params.p, seed=9).events(steps):
        state = step(state, params, ev)
    traj = trajectory(params, x0, steps, mode, seed=9)
    ref = state.ratios() if mode == "pushsum" else state.values
    got = traj.final_state.ratios() if mode == "pushsum" else traj.final_state.values
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)
    assert traj.upper[-1] == pytest.approx(ref.max(), rel=1e-12)


def test_renormalization_keeps_ratios():
    # long lossy run: raw weights would underflow without rescaling
    params = ProtocolParams(3, 0.9, 0.5)
    traj = trajectory(params, [1.0, 2.0, 4.0], 200_000, seed=3)
    assert np.all(traj.min_weight > 0)
    assert np.all(np.diff(traj.upper) <= 4 * EPS * 4)
    assert np.all(np.diff(traj.lower) >= -4 * EPS * 4)
    assert traj.final_state.weights.max() <= 2.0


# --- runs -------------------------------------------------------------------

def test_lossless_two_agents_exact():
    rec = run_to_consensus(ProtocolParams(2, 0.0), [-1.0, 1.0], seed=1)
    assert rec.converged and abs(rec.value) <= 1e-12


def test_run_is_deterministic():
    params = ProtocolParams(2, 0.5)
    a = run_to_consensus(params, [-1.0, 1.0], seed=77)
    b = run_to_consensus(params, [-1.0, 1.0], seed=77)
    assert a == b
    assert a != run_to_consensus(params, [-1.0, 1.0], seed=78)


@given(st.integers(0, 2**32), st.floats(0, 0.95), st.lists(values, min_size=2, max_size=6),
       st.sampled_from(["pushsum", "consensus"]))
def test_final_value_inside_initial_range(seed, p, vals, mode):
    rec = run_to_consensus(ProtocolParams(len(vals), p, tol=1e-9), vals, mode, seed)
    assert rec.converged
    slack = 1e-9 + 4 * EPS * max(map(abs, vals))
    assert min(vals) - slack <= rec.value <= max(vals) + slack


def test_already_converged_takes_no_steps():
    rec = run_to_consensus(ProtocolParams(3, 0.5), [2.0, 2.0, 2.0])
    assert rec.steps == 0 and rec.converged and rec.value == 2.0


def test_budget_exhaustion_is_reported():
    rec = run_to_consensus(ProtocolParams(5, 0.5, max_steps=10), np.arange(5.0), seed=0)
    assert not rec.converged and rec.steps == 10


def test_wrong_length_values():
    with pytest.raises(ValueError):
        run_to_consensus(ProtocolParams(3, 0.1), [1.0, 2.0])


# --- exponential convergence ------------------------------------------------

def test_decay_rate_two_agents():
    traj = trajectory(ProtocolParams(2, 0.5), [-1.0, 1.0], 10_000, seed=2)
    assert fit_decay_rate(traj.spread) < -0.05


@pytest.mark.parametrize("p", [0.0, 0.3, 0.6, 0.9])
@pytest.mark.parametrize("n", [2, 5])
def test_decay_rate_negative_almost_always(p, n):
    params = ProtocolParams(n, p)
    rng = np.random.default_rng(1000 * n + int(10 * p))
    negative = 0
    for seed in range(100):
        traj = trajectory(params, rng.normal(size=n), 10_000, seed=seed)
        negative += fit_decay_rate(traj.spread) < 0
    assert negative >= 99


def test_fit_decay_rate_on_synthetic_geometric():
    s = 3.0 * 0.9 ** np.arange(200)
    assert fit_decay_rate(s) == pytest.approx(np.log(0.9), rel=1e-9)
    assert np.isnan(fit_decay_rate(np.array([1.0])))
