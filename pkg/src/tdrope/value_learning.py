"""Tabular q-function estimation: TD learning and exact Bellman oracles."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .exceptions import ConvergenceError
from .mdp import MdpSpec, PolicyTable, Trajectory, policy_kernel, stationary_numeric

DISCOUNTED = "discounted"
DIFFERENTIAL = "differential"


@dataclass(frozen=True)
class QTable:
    """q-values on a dense ``(n_states, 2)`` grid indexed by state id.

    States outside the grid read as ``default``.  ``gamma`` is set for
    discounted tables, ``theta_hat`` (the average-reward estimate) for
    differential ones.
    """

    values: np.ndarray
    kind: str = DISCOUNTED
    gamma: Optional[float] = None
    theta_hat: Optional[float] = None
    default: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != 2:
            raise ValueError("QTable values must have shape (n_states, 2)")
        if self.kind not in (DISCOUNTED, DIFFERENTIAL):
            raise ValueError(f"unknown QTable kind {self.kind!r}")
        if self.kind == DISCOUNTED and self.gamma is not None and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, n_states: int, kind: str = DISCOUNTED, gamma=None, theta_hat=None) -> "QTable":
        if kind == DIFFERENTIAL and theta_hat is None:
            theta_hat = 0.0
        return cls(np.zeros((n_states, 2)), kind, gamma, theta_hat)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    def known(self, states) -> np.ndarray:
        states = np.asarray(states)
        return (states >= 0) & (states < self.n_states)

    def lookup(self, states, actions) -> np.ndarray:
        states = np.asarray(states)
        inside = self.known(states)
        out = np.full(states.shape, self.default, dtype=float)
        out[inside] = self.values[states[inside], np.asarray(actions)[inside]]
        return out

    def shifted(self, kappa: float) -> "QTable":
        """Copy with ``kappa`` added to every entry (and to the default)."""
        return replace(self, values=self.values + kappa, default=self.default + kappa)


def value_from_q(q: QTable, pi_e: PolicyTable, s):
    """``v(s) = pi_e(1|s) q(s, 1) + pi_e(0|s) q(s, 0)``; vectorized over ``s``."""
    s = np.asarray(s)
    p1 = pi_e.treat(s)
    v = p1 * q.lookup(s, np.ones_like(s)) + (1.0 - p1) * q.lookup(s, np.zeros_like(s))
    return float(v) if v.ndim == 0 else v


def _grown(init: QTable, traj: Trajectory) -> np.ndarray:
    top = int(max(traj.states.max(initial=0), traj.next_states.max(initial=0)))
    values = init.values.copy()
    if top >= len(values):
        pad = np.full((top + 1 - len(values), 2), init.default)
        values = np.vstack([values, pad])
    return values


def td_discounted(
    traj: Trajectory,
    pi_e: PolicyTable,
    gamma: float,
    nu: float,
    init: Optional[QTable] = None,
    epochs: int = 1,
) -> QTable:
    """Discounted TD evaluation of ``pi_e``: ``epochs`` in-order sweeps over ``traj``.

    Each tuple applies
    ``q(s,a) += nu * (r + gamma * (pi_e q(s',1) + (1-pi_e) q(s',0)) - q(s,a))``.
    The table grows to cover every state in the trajectory; new rows start
    at ``init.default``.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if nu < 0:
        raise ValueError("learning rate must be nonnegative")
    if init is None:
        init = QTable.zeros(1, DISCOUNTED, gamma)
    q = _grown(init, traj)
    p_next = pi_e.treat(traj.next_states)
    S, A, R, S2 = (x.tolist() for x in (traj.states, traj.actions, traj.rewards, traj.next_states))
    p_next = p_next.tolist()
    for _ in range(epochs):
        for s, a, r, s2, pe in zip(S, A, R, S2, p_next):
            target = r + gamma * (pe * q[s2, 1] + (1.0 - pe) * q[s2, 0])
            q[s, a] += nu * (target - q[s, a])
    return QTable(q, DISCOUNTED, gamma, None, init.default)


def td_differential(
    traj: Trajectory,
    pi_e: PolicyTable,
    nu1: float,
    nu2: float,
    init: Optional[QTable] = None,
    epochs: int = 1,
) -> QTable:
    """Average-reward TD: joint updates of the differential Q and ``theta_hat``.

    Both updates use the same residual
    ``r - theta_hat + pi_e Q(s',1) + (1-pi_e) Q(s',0) - Q(s,a)``, computed
    before either is applied.
    """
    if nu1 < 0 or nu2 < 0:
        raise ValueError("learning rates must be nonnegative")
    if init is None:
        init = QTable.zeros(1, DIFFERENTIAL)
    q = _grown(init, traj)
    theta = float(init.theta_hat or 0.0)
    p_next = pi_e.treat(traj.next_states).tolist()
    S, A, R, S2 = (x.tolist() for x in (traj.states, traj.actions, traj.rewards, traj.next_states))
    for _ in range(epochs):
        for s, a, r, s2, pe in zip(S, A, R, S2, p_next):
            delta = r - theta + pe * q[s2, 1] + (1.0 - pe) * q[s2, 0] - q[s, a]
            q[s, a] += nu1 * delta
            theta += nu2 * delta
    return QTable(q, DIFFERENTIAL, None, theta, init.default)


# ---------------------------------------------------------------------------
# exact oracles
# ---------------------------------------------------------------------------


def exact_q_discounted(
    mdp: MdpSpec,
    pi_e: PolicyTable,
    gamma: float,
    s_max: int = 500,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> QTable:
    """Discounted q of ``pi_e`` by value iteration on the (truncated) state space.

    Stops once the sup-norm Bellman residual is below ``tol``.
    """
    P = mdp.kernel(s_max)
    n = P.shape[0]
    r = mdp.mean_reward(np.arange(n))
    p1 = pi_e.treat(np.arange(n))
    q = np.zeros((n, 2))
    resid = np.inf
    for _ in range(max_iter):
        v = p1 * q[:, 1] + (1.0 - p1) * q[:, 0]
        q_new = r[:, None] + gamma * (P @ v)
        step = np.abs(q_new - q).max()
        q = q_new
        # residual of the new iterate is at most gamma times the last step
        resid = gamma * step
        if resid < tol:
            break
    else:
        raise ConvergenceError("value iteration hit its iteration cap", resid)
    return QTable(q, DISCOUNTED, gamma)


def exact_q_differential(
    mdp: MdpSpec,
    pi_e: PolicyTable,
    s_max: int = 500,
    tol: float = 1e-10,
    max_doublings: int = 64,
) -> QTable:
    """Differential Q of ``pi_e`` with the normalization ``E_{p_e}[V] = 0``.

    ``theta`` comes from the stationary oracle.  The relative value function
    ``h = sum_k P^k (r - theta)`` is summed by doubling
    (``h_{2N} = h_N + P^N h_N``) and recentred under ``p_e`` at every
    stage; ``Q(s,a) = r(s) - theta + sum_s' P(s'|s,a) V(s')``.
    """
    P = mdp.kernel(s_max)
    n = P.shape[0]
    Ppi = policy_kernel(mdp, pi_e, s_max)
    p_e = stationary_numeric(mdp, pi_e, s_max=n - 1, tol=min(tol, 1e-12))
    r = mdp.mean_reward(np.arange(n))
    theta = float(p_e @ r)
    g = r - theta
    h = g.copy()
    M = Ppi.copy()
    resid = np.inf
    for _ in range(max_doublings):
        h_next = h + M @ h
        h_next -= p_e @ h_next
        step = np.abs(h_next - h).max()
        h = h_next
        if step < tol * 1e-2:
            break
        M = M @ M
        M /= M.sum(axis=1, keepdims=True)
    else:
        raise ConvergenceError("relative value iteration did not converge", step)
    # polish with plain relative value iteration steps
    for _ in range(1000):
        h_next = g + Ppi @ h
        h_next -= p_e @ h_next
        resid = np.abs(h_next - h).max()
        h = h_next
        if resid < tol * 1e-2:
            break
    q = g[:, None] + P @ h
    p1 = pi_e.treat(np.arange(n))
    v = p1 * q[:, 1] + (1.0 - p1) * q[:, 0]
    resid = np.abs(q + theta - (r[:, None] + P @ v)).max()
    if resid > tol * 100:
        raise ConvergenceError("differential Bellman identity not met", resid)
    return QTable(q, DIFFERENTIAL, None, theta)


def bellman_residual_discounted(q: QTable, mdp: MdpSpec, pi_e: PolicyTable, s_max: int = 500) -> np.ndarray:
    """``q(s,a) - E[R + gamma v(S') | s, a]`` on the full grid."""
    P = mdp.kernel(s_max)
    n = P.shape[0]
    r = mdp.mean_reward(np.arange(n))
    v = value_from_q(q, pi_e, np.arange(n))
    return q.values[:n] - (r[:, None] + q.gamma * (P @ v))


def bellman_residual_differential(q: QTable, mdp: MdpSpec, pi_e: PolicyTable, s_max: int = 500) -> np.ndarray:
    """``Q(s,a) + theta - E[R + V(S') | s, a]`` on the full grid."""
    P = mdp.kernel(s_max)
    n = P.shape[0]
    r = mdp.mean_reward(np.arange(n))
    v = value_from_q(q, pi_e, np.arange(n))
    return q.values[:n] + q.theta_hat - (r[:, None] + P @ v)
