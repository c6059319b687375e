"""Invariants checked over generated inputs."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tdrope.adaptive import BootstrapInterval, block_indices, lepski_index, moving_block_resample
from tdrope.density_ratio import DensityRatioTable, solve_constrained_ls
from tdrope.estimators import TruncationSchedule, dr_discounted, tdr_discounted, tdr_longrun
from tdrope.mdp import ChainMdp, PolicyTable, Trajectory, make_rng, policy_kernel, stationary_chain
from tdrope.value_learning import DIFFERENTIAL, QTable, value_from_q

N = 8
finite = st.floats(-50, 50, allow_nan=False)
probs = st.floats(0.05, 0.95)


@st.composite
def trajectories(draw, max_len=40):
    T = draw(st.integers(1, max_len))
    states = draw(arrays(np.int64, T, elements=st.integers(1, N - 1)))
    actions = draw(arrays(np.int64, T, elements=st.integers(0, 1)))
    rewards = draw(arrays(float, T, elements=finite))
    nxt = draw(arrays(np.int64, T, elements=st.integers(1, N - 1)))
    return Trajectory(states, actions, rewards, nxt)


q_values = arrays(float, (N, 2), elements=finite)
omegas = arrays(float, N, elements=st.floats(0.0, 40.0))
positive_omegas = arrays(float, N, elements=st.floats(0.01, 40.0))
schedules = st.one_of(
    st.just(TruncationSchedule()),
    st.builds(TruncationSchedule, st.sampled_from(["t", "T"]), st.floats(0.0, 1.5)),
)


@given(trajectories(), q_values, omegas, probs, probs, st.floats(0.01, 0.99))
def test_tdr_none_is_dr(traj, q, w, ub, ue, gamma):
    qt = QTable(q, gamma=gamma)
    p0 = np.full(N, 1.0 / N)
    args = (traj, qt, DensityRatioTable(w), PolicyTable.constant(ue), PolicyTable.constant(ub), gamma, p0)
    assert tdr_discounted(*args, TruncationSchedule()).estimate == dr_discounted(*args).estimate


@given(trajectories(), q_values, positive_omegas, probs, probs, schedules, st.floats(-100, 100))
def test_longrun_shift_invariant(traj, q, w, ub, ue, sched, kappa):
    pi_e, pi_b = PolicyTable.constant(ue), PolicyTable.constant(ub)
    qt = QTable(q, DIFFERENTIAL)
    a = tdr_longrun(traj, qt, DensityRatioTable(w), pi_e, pi_b, sched).estimate
    b = tdr_longrun(traj, qt.shifted(kappa), DensityRatioTable(w), pi_e, pi_b, sched).estimate
    assert abs(a - b) <= 1e-12 * max(1.0, abs(kappa), np.abs(q).max(), np.abs(traj.rewards).max())


@given(trajectories(), q_values, positive_omegas, probs, probs, schedules)
def test_self_normalized_range(traj, q, w, ub, ue, sched):
    pi_e, pi_b = PolicyTable.constant(ue), PolicyTable.constant(ub)
    qt = QTable(q, DIFFERENTIAL)
    est = tdr_longrun(traj, qt, DensityRatioTable(w), pi_e, pi_b, sched).estimate
    resid = traj.rewards + value_from_q(qt, pi_e, traj.next_states) - qt.lookup(traj.states, traj.actions)
    slack = 1e-9 * max(1.0, np.abs(resid).max())
    assert resid.min() - slack <= est <= resid.max() + slack


@given(trajectories(), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_truncation_count_monotone(traj, a1, a2):
    lo, hi = sorted((a1, a2))
    w = DensityRatioTable(np.linspace(0.0, 30.0, N))
    q = QTable.zeros(N, gamma=0.5)
    args = (traj, q, w, PolicyTable.constant(1.0), PolicyTable.constant(0.2), 0.5, np.full(N, 1.0 / N))
    strong = tdr_discounted(*args, TruncationSchedule("t", lo))
    weak = tdr_discounted(*args, TruncationSchedule("t", hi))
    assert weak.n_truncated <= strong.n_truncated


@given(st.integers(1, 500), st.floats(0.0, 2.0))
def test_levels_nondecreasing(T, alpha):
    lv = TruncationSchedule("t", alpha).levels(T)
    assert lv[0] >= 1.0 and np.all(np.diff(lv) >= 0)


@settings(max_examples=50)
@given(arrays(float, (4, 4), elements=st.floats(-5, 5)), arrays(float, 4, elements=st.floats(0.01, 3)))
def test_constrained_ls_feasible(H, c):
    beta = solve_constrained_ls(H, c)
    assert beta.min() >= 0.0 and abs(c @ beta - 1.0) < 1e-9
    # no feasible vertex does better
    for j in range(4):
        vertex = np.zeros(4)
        vertex[j] = 1.0 / c[j]
        assert np.sum((H @ beta) ** 2) <= np.sum((H @ vertex) ** 2) + 1e-7 * max(1.0, np.sum(H ** 2))


@given(st.integers(1, 300), st.data())
def test_block_resample_shape(T, data):
    ell = data.draw(st.integers(1, T))
    idx = block_indices(T, ell, make_rng(data.draw(st.integers(0, 2 ** 32))))
    assert len(idx) == T and idx.min() >= 0 and idx.max() < T


@given(trajectories(), st.integers(0, 1000))
def test_resample_keeps_tuples(traj, seed):
    res = moving_block_resample(traj, 1 + len(traj) // 3, make_rng(seed))
    seen = set(zip(traj.states, traj.actions, traj.rewards, traj.next_states))
    assert len(res) == len(traj)
    assert set(zip(res.states, res.actions, res.rewards, res.next_states)) <= seen


@given(st.lists(st.tuples(finite, st.floats(0.0, 10.0)), min_size=1, max_size=8))
def test_lepski_choice_intersects(pairs):
    cis = [BootstrapInterval(m, s, m - s, m + s) for m, s in pairs]
    k = lepski_index(cis)
    assert 0 <= k < len(cis)
    assert max(c.lo for c in cis[: k + 1]) <= min(c.hi for c in cis[: k + 1])


@given(st.floats(0.05, 1.0), st.floats(0.05, 0.95), st.integers(3, 30))
def test_chain_stationary_valid(u, beta, Q):
    p = stationary_chain(u, beta, Q)
    P = policy_kernel(ChainMdp(Q, beta), PolicyTable.constant(u))
    assert p.min() >= 0 and abs(p.sum() - 1) < 1e-12
    assert np.abs(p @ P - p).max() < 1e-10


@given(q_values, q_values, finite, probs)
def test_value_linear_in_q(q1, q2, c, u):
    pi = PolicyTable.constant(u)
    s = np.arange(N)
    lhs = value_from_q(QTable(q1 + c * q2), pi, s)
    rhs = value_from_q(QTable(q1), pi, s) + c * value_from_q(QTable(q2), pi, s)
    assert np.allclose(lhs, rhs, atol=1e-9 * (1 + abs(c)) * 100)
