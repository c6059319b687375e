"""Simulation MDPs, policies, trajectories and stationary-distribution oracles.

Two generative models are provided:

* :class:`ChainMdp` -- states ``1..Q``; action 0 resets to state 1, action 1
  moves to ``min(i + 1, Q)`` unless a reset with probability ``reset_prob``
  happens first.
* :class:`QueueMdp` -- a queue length ``x >= 0`` served at unit rate with
  Poisson arrivals whose rate depends on the action.

Distributions, value tables and density ratios are plain numpy arrays indexed
by the state id itself.  For the chain this means index 0 is a placeholder
that carries zero stationary mass.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Mapping, Optional, Union

import numpy as np

from .exceptions import ConvergenceError, InvalidStateError, OverlapViolationError

REWARD_BASE = 10.0
REWARD_SCALE = 5.0
NOISE_HALFWIDTH = 0.5
# rewards lie in [REWARD_BASE - REWARD_SCALE - 1/2, REWARD_BASE + 1/2]
R_MAX = REWARD_BASE + NOISE_HALFWIDTH


def make_rng(seed: Union[int, np.random.SeedSequence, None] = None) -> np.random.Generator:
    """Counter-based Philox generator seeded from a 64-bit integer or SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyTable:
    """Binary-action policy given by the probability of action 1 in each state.

    Parameters
    ----------
    treat_prob : mapping of state id to probability of action 1
    default_prob : probability of action 1 for states absent from ``treat_prob``
    """

    treat_prob: Mapping[int, float] = field(default_factory=dict)
    default_prob: float = 0.0

    def __post_init__(self):
        probs = [self.default_prob, *self.treat_prob.values()]
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"treatment probability {p} outside [0, 1]")
        object.__setattr__(self, "treat_prob", {int(k): float(v) for k, v in self.treat_prob.items()})

    @classmethod
    def constant(cls, u: float) -> "PolicyTable":
        """State-independent policy that treats with probability ``u``."""
        return cls({}, float(u))

    def treat(self, states) -> np.ndarray:
        """Probability of action 1 for an array of states."""
        states = np.asarray(states)
        if not self.treat_prob:
            return np.full(states.shape, self.default_prob)
        top = max(self.treat_prob)
        table = np.full(top + 1, self.default_prob)
        for s, p in self.treat_prob.items():
            if s >= 0:
                table[s] = p
        out = np.full(states.shape, self.default_prob)
        inside = (states >= 0) & (states <= top)
        out[inside] = table[states[inside]]
        return out

    def prob(self, states, actions) -> np.ndarray:
        """``pi(a | s)`` elementwise; the action-0 probability is ``1 - pi(1 | s)``."""
        p1 = self.treat(states)
        actions = np.asarray(actions)
        return np.where(actions == 1, p1, 1.0 - p1)


def policy_ratio(pi_e: PolicyTable, pi_b: PolicyTable, s, a):
    """Importance ratio ``pi_e(a|s) / pi_b(a|s)``, vectorized over ``s`` and ``a``.

    The ratio is 0 when both probabilities vanish.  Raises
    :class:`OverlapViolationError` when only the behavior probability is 0.
    """
    num = pi_e.prob(s, a)
    den = pi_b.prob(s, a)
    bad = (den == 0) & (num > 0)
    if np.any(bad):
        raise OverlapViolationError("behavior policy never takes an action the evaluation policy takes")
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    if np.ndim(eta) == 0:
        return float(eta)
    return eta


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainMdp:
    """Reset chain on states ``1..num_states``."""

    num_states: int = 20
    reset_prob: float = 0.5

    def __post_init__(self):
        if self.num_states < 1:
            raise ValueError("num_states must be positive")
        if not 0.0 <= self.reset_prob <= 1.0:
            raise ValueError("reset_prob must lie in [0, 1]")

    @property
    def first_state(self) -> int:
        return 1

    def size(self, s_max: Optional[int] = None) -> int:
        """Length of state-indexed arrays (index 0 is a placeholder)."""
        return self.num_states + 1

    def valid_states(self, s_max: Optional[int] = None) -> np.ndarray:
        return np.arange(1, self.num_states + 1)

    def check_states(self, states) -> None:
        states = np.asarray(states)
        if np.any((states < 1) | (states > self.num_states)):
            raise InvalidStateError(f"chain state outside 1..{self.num_states}")

    def mean_reward(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(states >= 1, REWARD_BASE - REWARD_SCALE / np.sqrt(np.maximum(states, 1.0)), 0.0)

    def transition(self, states, actions, u) -> np.ndarray:
        """Next states given uniforms ``u`` in [0, 1); ``u < reset_prob`` resets."""
        advance = (actions == 1) & (u >= self.reset_prob)
        return np.where(advance, np.minimum(states + 1, self.num_states), 1)

    def next_state(self, s: int, a: int, u: float) -> int:
        if a == 1 and u >= self.reset_prob:
            return s + 1 if s < self.num_states else s
        return 1

    def kernel(self, s_max: Optional[int] = None) -> np.ndarray:
        """Transition tensor ``P[s, a, s']``; the placeholder row 0 jumps to state 1."""
        n = self.num_states + 1
        P = np.zeros((n, 2, n))
        P[:, 0, 1] = 1.0
        for s in range(1, n):
            P[s, 1, min(s + 1, self.num_states)] += 1.0 - self.reset_prob
            P[s, 1, 1] += self.reset_prob
        P[0, 1, 1] = 1.0
        return P


@dataclass(frozen=True)
class QueueMdp:
    """Unit-rate queue with Poisson(``lambda0``/``lambda1``) arrivals under action 0/1."""

    lambda0: float = 0.1
    lambda1: float = 0.9

    def __post_init__(self):
        if self.lambda0 < 0 or self.lambda1 < 0:
            raise ValueError("arrival rates must be nonnegative")

    @property
    def first_state(self) -> int:
        return 0

    def size(self, s_max: Optional[int] = None) -> int:
        return (500 if s_max is None else int(s_max)) + 1

    def valid_states(self, s_max: Optional[int] = None) -> np.ndarray:
        return np.arange(self.size(s_max))

    def check_states(self, states) -> None:
        if np.any(np.asarray(states) < 0):
            raise InvalidStateError("queue length must be nonnegative")

    def mean_reward(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        return REWARD_BASE - REWARD_SCALE / np.sqrt(states + 1.0)

    def transition(self, states, actions, u) -> np.ndarray:
        arrivals = np.where(
            actions == 1,
            poisson_inverse(self.lambda1, u),
            poisson_inverse(self.lambda0, u),
        )
        return np.maximum(states - 1 + arrivals, 0)

    def next_state(self, s: int, a: int, u: float) -> int:
        table = _poisson_cdf_list(self.lambda1 if a == 1 else self.lambda0)
        return max(s - 1 + bisect_right(table, u), 0)

    def kernel(self, s_max: Optional[int] = None) -> np.ndarray:
        """Transition tensor on ``0..s_max``; overflow mass is folded into ``s_max``."""
        return _queue_kernel(self.lambda0, self.lambda1, self.size(s_max)).copy()


MdpSpec = Union[ChainMdp, QueueMdp]


@lru_cache(maxsize=32)
def _queue_kernel(lambda0: float, lambda1: float, n: int) -> np.ndarray:
    P = np.zeros((n, 2, n))
    x = np.arange(n)
    b = np.arange(n + 1)
    # next = max(x - 1 + B, 0); arrivals past the array all land in the last state
    target = np.clip(x[:, None] - 1 + b[None, :], 0, n - 1)
    rows = np.broadcast_to(x[:, None], target.shape)
    for a, lam in enumerate((lambda0, lambda1)):
        pmf = _poisson_pmf(lam, n + 1)
        np.add.at(P[:, a, :], (rows, target), np.broadcast_to(pmf, target.shape))
        P[:, a, n - 1] += max(1.0 - pmf.sum(), 0.0)
    return P


def _poisson_pmf(lam: float, kmax: int) -> np.ndarray:
    k = np.arange(kmax)
    if lam == 0:
        return (k == 0).astype(float)
    logp = k * math.log(lam) - lam - np.array([math.lgamma(i + 1) for i in k])
    return np.exp(logp)


_CDF_CACHE: dict = {}


def _poisson_cdf_table(lam: float) -> np.ndarray:
    table = _CDF_CACHE.get(lam)
    if table is None:
        kmax = int(lam + 12 * math.sqrt(lam) + 30)
        table = np.cumsum(_poisson_pmf(lam, kmax))
        _CDF_CACHE[lam] = table
    return table


@lru_cache(maxsize=None)
def _poisson_cdf_list(lam: float) -> list:
    return _poisson_cdf_table(lam).tolist()


def poisson_inverse(lam: float, u) -> np.ndarray:
    """Poisson(lam) draws by inversion: the number of CDF values ``<= u``."""
    return np.searchsorted(_poisson_cdf_table(lam), u, side="right")


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Transition tuples ``(S_t, A_t, R_t, S'_t)`` for ``t = 0..T-1``.

    A freshly sampled trajectory is contiguous (``S'_t == S_{t+1}``).  Block
    bootstrap resamples keep each tuple's own next state and are contiguous
    only inside blocks.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        n = len(self.states)
        if not (len(self.actions) == len(self.rewards) == len(self.next_states) == n):
            raise ValueError("trajectory arrays must share one length")
        if n and not np.all((self.actions == 0) | (self.actions == 1)):
            raise ValueError("actions must be 0 or 1")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def terminal_state(self) -> int:
        return int(self.next_states[-1])

    def is_contiguous(self) -> bool:
        return bool(np.array_equal(self.next_states[:-1], self.states[1:]))

    def steps(self) -> Iterator[tuple]:
        """Yield ``(t, s, a, r, s_next)`` tuples."""
        for t in range(len(self)):
            yield t, int(self.states[t]), int(self.actions[t]), float(self.rewards[t]), int(self.next_states[t])

    def take(self, index) -> "Trajectory":
        """Trajectory made of the tuples at ``index`` (in that order)."""
        return Trajectory(self.states[index], self.actions[index], self.rewards[index], self.next_states[index])


def step(mdp: MdpSpec, s: int, a: int, rng: np.random.Generator) -> tuple:
    """One transition from ``(s, a)``: returns ``(s_next, r)``."""
    mdp.check_states([s])
    if a not in (0, 1):
        raise ValueError("action must be 0 or 1")
    u_trans, u_rew = rng.random(2)
    s_next = int(mdp.transition(np.asarray(s), np.asarray(a), u_trans))
    r = float(mdp.mean_reward(s)) + (u_rew - NOISE_HALFWIDTH)
    return s_next, r


def draw_noise(rng: np.random.Generator, T: int) -> np.ndarray:
    """Uniform driving noise of one trajectory: rows are action, transition, reward."""
    return rng.random((3, T))


def rollout(mdp: MdpSpec, policy: PolicyTable, s0, noise: np.ndarray) -> list:
    """Run the dynamics on pre-drawn noise, vectorized over a batch.

    ``s0`` has shape ``(R,)`` and ``noise`` shape ``(R, 3, T)``; returns a
    list of ``R`` trajectories.  Trajectory ``i`` depends only on ``s0[i]``
    and ``noise[i]``, so batching does not change results.
    """
    s0 = np.asarray(s0, dtype=np.int64)
    R, _, T = noise.shape
    states = np.empty((R, T + 1), dtype=np.int64)
    actions = np.empty((R, T), dtype=np.int64)
    states[:, 0] = s0
    if R < 8:
        # scalar loop beats numpy dispatch for a handful of trajectories
        for i in range(R):
            states[i], actions[i] = _rollout_scalar(mdp, policy, int(s0[i]), noise[i])
    else:
        s = s0
        for t in range(T):
            a = (noise[:, 0, t] < policy.treat(s)).astype(np.int64)
            actions[:, t] = a
            s = mdp.transition(s, a, noise[:, 1, t])
            states[:, t + 1] = s
    rewards = mdp.mean_reward(states[:, :-1]) + (noise[:, 2, :] - NOISE_HALFWIDTH)
    return [Trajectory(states[i, :-1], actions[i], rewards[i], states[i, 1:]) for i in range(R)]


def _rollout_scalar(mdp, policy, s0, noise):
    T = noise.shape[1]
    u_act = noise[0].tolist()
    u_trans = noise[1].tolist()
    if policy.treat_prob:
        probs = policy.treat_prob
        default = policy.default_prob
        treat = lambda s: probs.get(s, default)  # noqa: E731
    else:
        const = policy.default_prob
        treat = lambda s: const  # noqa: E731
    next_state = mdp.next_state
    states = [s0] * (T + 1)
    actions = [0] * T
    s = s0
    for t in range(T):
        a = 1 if u_act[t] < treat(s) else 0
        actions[t] = a
        s = next_state(s, a, u_trans[t])
        states[t + 1] = s
    return states, actions


def sample_initial(init, u0: float) -> int:
    """Draw a state from a state-indexed distribution by inversion."""
    cdf = np.cumsum(init)
    return int(min(np.searchsorted(cdf, u0 * cdf[-1], side="right"), len(cdf) - 1))


def sample_trajectory(
    mdp: MdpSpec,
    policy: PolicyTable,
    T: int,
    init,
    rng: np.random.Generator,
) -> Trajectory:
    """Sample ``T`` transitions under ``policy``.

    ``init`` is either a fixed state id or a state-indexed probability vector.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    u0 = rng.random()
    if np.ndim(init) == 0:
        s0 = int(init)
    else:
        s0 = sample_initial(np.asarray(init, dtype=float), u0)
    mdp.check_states([s0])
    noise = draw_noise(rng, T)
    return rollout(mdp, policy, [s0], noise[None])[0]


# ---------------------------------------------------------------------------
# stationary distributions
# ---------------------------------------------------------------------------


def stationary_chain(u: float, beta: float, Q: int) -> np.ndarray:
    """Closed-form stationary law of the reset chain, indexed by state id (length Q+1).

    With ``v = u (1 - beta)`` the law is ``(1 - v) v^(s-1)`` for ``s < Q`` and
    ``v^(Q-1)`` at ``Q``.  The boundary ``v = 1`` gives a point mass at ``Q``.
    """
    if not (0 <= u <= 1 and 0 <= beta <= 1):
        raise ValueError("u and beta must lie in [0, 1]")
    if Q < 2:
        raise ValueError("Q must be at least 2")
    v = u * (1.0 - beta)
    p = np.zeros(Q + 1)
    if v == 1.0:
        p[Q] = 1.0
        return p
    powers = v ** np.arange(Q - 1)
    p[1:Q] = (1.0 - v) * powers
    p[Q] = v ** (Q - 1)
    return p


def policy_kernel(mdp: MdpSpec, policy: PolicyTable, s_max: Optional[int] = None) -> np.ndarray:
    """State-to-state kernel ``P_pi[s, s'] = sum_a pi(a|s) P[s, a, s']``."""
    P = mdp.kernel(s_max)
    p1 = policy.treat(np.arange(P.shape[0]))
    return (1.0 - p1)[:, None] * P[:, 0, :] + p1[:, None] * P[:, 1, :]


def stationary_numeric(
    mdp: MdpSpec,
    policy: PolicyTable,
    s_max: int = 500,
    tol: float = 1e-12,
    max_doublings: int = 64,
) -> np.ndarray:
    """Stationary law by power iteration with repeated squaring of the kernel.

    Iterate ``p <- p P^(2^k)`` until ``||p P - p||_1 < tol``.  For the queue
    the state space is truncated at ``s_max`` and the mass left at ``s_max``
    must stay below ``tol``.
    """
    P = policy_kernel(mdp, policy, s_max)
    return stationary_from_kernel(P, mdp.valid_states(s_max), tol=tol, max_doublings=max_doublings,
                                  check_tail=isinstance(mdp, QueueMdp))


def stationary_from_kernel(P, support=None, tol=1e-12, max_doublings=64, check_tail=False) -> np.ndarray:
    n = P.shape[0]
    p = np.zeros(n)
    support = np.arange(n) if support is None else support
    p[support] = 1.0 / len(support)
    M = P.copy()
    resid = np.inf
    for _ in range(max_doublings):
        p = p @ M
        p = np.maximum(p, 0.0)
        p /= p.sum()
        # a few plain steps polish rounding from the squared kernel
        for _ in range(3):
            q = p @ P
            resid = np.abs(q - p).sum()
            p = q / q.sum()
        if resid < tol:
            break
        M = M @ M
        M /= M.sum(axis=1, keepdims=True)
    else:
        raise ConvergenceError("power iteration did not converge", resid)
    if check_tail and p[-1] > tol:
        raise ConvergenceError("truncation level too small: tail mass exceeds tolerance", p[-1])
    return p


def total_variation(p, q) -> float:
    n = max(len(p), len(q))
    pp = np.zeros(n)
    qq = np.zeros(n)
    pp[: len(p)] = p
    qq[: len(q)] = q
    return 0.5 * float(np.abs(pp - qq).sum())


def visit_frequencies(traj: Trajectory, size: int) -> np.ndarray:
    counts = np.bincount(np.asarray(traj.states), minlength=size)[:size]
    return counts / counts.sum()
