"""Doubly robust and truncated doubly robust off-policy estimators.

All four estimators share one arithmetic path: the untruncated (DR) form is
the truncated (TDR) form with an infinite truncation level, and
``min(w, inf) == w`` exactly, so both agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional

import numpy as np

from .density_ratio import DensityRatioTable
from .exceptions import DegenerateWeightsError
from .mdp import PolicyTable, Trajectory, policy_ratio
from .value_learning import DIFFERENTIAL, DISCOUNTED, QTable, value_from_q

NONE = "none"
PER_STEP = "t"
HORIZON = "T"
FIXED = "fixed"


@dataclass(frozen=True)
class TruncationSchedule:
    """Truncation levels ``tau_t``.

    ``mode`` is one of ``"none"`` (no truncation), ``"t"`` (``(t+1)^alpha``),
    ``"T"`` (``T^alpha`` at every step) or ``"fixed"`` (``level``).
    """

    mode: str = NONE
    alpha: float = 0.0
    level: float = math.inf

    def __post_init__(self):
        if self.mode not in (NONE, PER_STEP, HORIZON, FIXED):
            raise ValueError(f"unknown truncation mode {self.mode!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.mode == FIXED and not self.level > 0:
            raise ValueError("fixed truncation level must be positive")

    @classmethod
    def parse(cls, text: str) -> "TruncationSchedule":
        """Parse ``none``, ``t:0.7`` / ``t^0.7``, ``T:0.7`` / ``T^0.7`` or ``fixed:5``."""
        text = text.strip()
        if text.lower() in ("none", "dr", "inf"):
            return cls()
        for sep in (":", "^"):
            if sep in text:
                head, value = text.split(sep, 1)
                head = head.strip()
                if head == "fixed":
                    return cls(FIXED, 0.0, float(value))
                if head in (PER_STEP, HORIZON):
                    return cls(head, float(value))
        raise ValueError(f"cannot parse truncation schedule {text!r}")

    @property
    def label(self) -> str:
        if self.mode == NONE:
            return "none"
        if self.mode == FIXED:
            return f"fixed:{self.level:g}"
        return f"{self.mode}^{self.alpha:g}"

    def levels(self, T: int) -> np.ndarray:
        """``tau_t`` for ``t = 0..T-1``."""
        if self.mode == NONE:
            return np.full(T, np.inf)
        if self.mode == FIXED:
            return np.full(T, float(self.level))
        if self.mode == HORIZON:
            return np.full(T, float(T) ** self.alpha)
        return np.arange(1, T + 1, dtype=float) ** self.alpha


NO_TRUNCATION = TruncationSchedule()


def truncation_level(sched: TruncationSchedule, t: int, T: int) -> float:
    """Truncation level at step ``t`` of a length-``T`` trajectory."""
    if not 0 <= t < T:
        raise ValueError("step index outside 0..T-1")
    if sched.mode == NONE:
        return math.inf
    if sched.mode == FIXED:
        return float(sched.level)
    if sched.mode == HORIZON:
        return float(T) ** sched.alpha
    # same vectorized power as ``levels`` so both agree to the last bit
    return float(np.power(np.array([t + 1.0]), sched.alpha)[0])


@dataclass(frozen=True)
class EstimatorResult:
    estimator: str
    estimate: float
    schedule: TruncationSchedule
    n_truncated: int
    plug_in_variance: Optional[float]
    T: int
    n_missing: int = 0

    def interval(self, level: float = 0.95) -> tuple:
        """Normal confidence interval from the plug-in variance."""
        z = NormalDist().inv_cdf(0.5 + level / 2)
        half = z * math.sqrt(self.plug_in_variance / self.T)
        return self.estimate - half, self.estimate + half

    def csv_row(self) -> list:
        alpha = "" if self.schedule.mode in (NONE, FIXED) else repr(self.schedule.alpha)
        var = "" if self.plug_in_variance is None else repr(self.plug_in_variance)
        return [self.estimator, self.schedule.mode, alpha, self.T, repr(self.estimate), var, self.n_truncated]


CSV_HEADER = ["estimator", "schedule_mode", "alpha", "T", "estimate", "variance", "n_truncated"]


def _terms(traj, q_hat: QTable, omega_hat: DensityRatioTable, pi_e, pi_b, discount: float):
    """Per-tuple ratio, importance weight and Bellman residual ``R + d v(S') - q(S, A)``."""
    S, A, R, S2 = traj.states, traj.actions, traj.rewards, traj.next_states
    omega = omega_hat.lookup(S)
    eta = policy_ratio(pi_e, pi_b, S, A)
    resid = R + discount * value_from_q(q_hat, pi_e, S2) - q_hat.lookup(S, A)
    missing = int(np.count_nonzero(~omega_hat.known(S)) + np.count_nonzero(~q_hat.known(S))
                  + np.count_nonzero(~q_hat.known(S2)))
    return np.asarray(omega), np.asarray(eta), np.asarray(resid), missing


def _check_q(q_hat: QTable, kind: str, gamma=None):
    if q_hat.kind != kind:
        raise ValueError(f"expected a {kind} q-table, got {q_hat.kind}")
    if kind == DISCOUNTED and q_hat.gamma is not None and gamma is not None and not math.isclose(q_hat.gamma, gamma):
        raise ValueError("q-table discount does not match gamma")


def initial_value(q_hat: QTable, pi_e: PolicyTable, p0) -> float:
    """``sum_s p0(s) v(s)`` over the support of the state-indexed ``p0``."""
    p0 = np.asarray(p0, dtype=float)
    states = np.arange(len(p0))
    return float(p0 @ value_from_q(q_hat, pi_e, states))


def tdr_discounted(
    traj: Trajectory,
    q_hat: QTable,
    omega_hat: DensityRatioTable,
    pi_e: PolicyTable,
    pi_b: PolicyTable,
    gamma: float,
    p0,
    sched: TruncationSchedule = NO_TRUNCATION,
) -> EstimatorResult:
    """Truncated DR estimate of the normalized discounted value from ``p0``.

    ``(1-gamma) sum_s p0(s) v(s) + mean_t min(omega(S_t), tau_t) eta_t b_t``
    with ``b_t = R_t + gamma v(S'_t) - q(S_t, A_t)``.
    """
    _check_q(q_hat, DISCOUNTED, gamma)
    T = len(traj)
    omega, eta, resid, missing = _terms(traj, q_hat, omega_hat, pi_e, pi_b, gamma)
    tau = sched.levels(T)
    clipped = np.minimum(omega, tau)
    correction = np.mean(clipped * eta * resid)
    estimate = (1.0 - gamma) * initial_value(q_hat, pi_e, p0) + correction
    variance = float(np.mean((omega * eta * resid) ** 2))
    name = "DR" if sched.mode == NONE else "TDR"
    return EstimatorResult(name, float(estimate), sched, int(np.count_nonzero(omega > tau)), variance, T, missing)


def dr_discounted(traj, q_hat, omega_hat, pi_e, pi_b, gamma, p0) -> EstimatorResult:
    """Untruncated doubly robust estimate of the discounted value."""
    return tdr_discounted(traj, q_hat, omega_hat, pi_e, pi_b, gamma, p0, NO_TRUNCATION)


def tdr_longrun(
    traj: Trajectory,
    Q_hat: QTable,
    omega_hat: DensityRatioTable,
    pi_e: PolicyTable,
    pi_b: PolicyTable,
    sched: TruncationSchedule = NO_TRUNCATION,
) -> EstimatorResult:
    """Self-normalized truncated DR estimate of the long-run average reward."""
    _check_q(Q_hat, DIFFERENTIAL)
    T = len(traj)
    omega, eta, resid, missing = _terms(traj, Q_hat, omega_hat, pi_e, pi_b, 1.0)
    tau = sched.levels(T)
    weights = np.minimum(omega, tau) * eta
    total = weights.sum()
    if not total > 0:
        raise DegenerateWeightsError("all self-normalization weights are zero")
    estimate = float(np.sum(weights * resid) / total)
    variance = float(np.mean((omega * eta * (resid - estimate)) ** 2))
    name = "DR" if sched.mode == NONE else "TDR"
    return EstimatorResult(name, estimate, sched, int(np.count_nonzero(omega > tau)), variance, T, missing)


def dr_longrun(traj, Q_hat, omega_hat, pi_e, pi_b) -> EstimatorResult:
    """Untruncated self-normalized DR estimate of the long-run average reward."""
    return tdr_longrun(traj, Q_hat, omega_hat, pi_e, pi_b, NO_TRUNCATION)


def plug_in_variance_discounted(traj, q_hat, omega_hat, pi_e, pi_b, gamma) -> float:
    """Empirical ``mean_t omega(S_t)^2 eta_t^2 (R_t + gamma v(S'_t) - q(S_t, A_t))^2``."""
    omega, eta, resid, _ = _terms(traj, q_hat, omega_hat, pi_e, pi_b, gamma)
    return float(np.mean((omega * eta * resid) ** 2))


def plug_in_variance_longrun(traj, Q_hat, omega_hat, pi_e, pi_b, theta_ref: float) -> float:
    """Empirical ``mean_t omega^2 eta^2 (R_t + V(S'_t) - Q(S_t, A_t) - theta_ref)^2``."""
    omega, eta, resid, _ = _terms(traj, Q_hat, omega_hat, pi_e, pi_b, 1.0)
    return float(np.mean((omega * eta * (resid - theta_ref)) ** 2))


def normal_interval(estimate: float, variance: float, T: int, z: float = 1.96) -> tuple:
    half = z * math.sqrt(variance / T)
    return estimate - half, estimate + half


# ---------------------------------------------------------------------------
# overlap exponents and theory-guided schedules
# ---------------------------------------------------------------------------


def mixing_overlap_exponent(zeta_pi: float, t0: float) -> float:
    """Weak-overlap exponent ``1 / (zeta_pi t0)`` implied by geometric mixing.

    ``zeta_pi = log C_eta`` bounds the policy ratio and ``t0`` is the mixing
    time constant.
    """
    if zeta_pi <= 0 or t0 <= 0:
        raise ValueError("zeta_pi and t0 must be positive")
    return 1.0 / (zeta_pi * t0)


def theory_exponent(delta: float) -> float:
    """Truncation exponent that balances bias and variance: ``1/(1+delta)`` up to ``delta = 1``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return 1.0 / (1.0 + delta) if delta < 1 else 0.5


def theory_schedule(delta: float, mode: str = PER_STEP) -> TruncationSchedule:
    return TruncationSchedule(mode, theory_exponent(delta))


def ratio_moment(omega, p_b, delta: float) -> float:
    """``E_{p_b}[omega^(1+delta)]``."""
    omega = np.asarray(omega, dtype=float)
    p_b = np.asarray(p_b, dtype=float)[: len(omega)]
    return float(p_b @ omega[: len(p_b)] ** (1.0 + delta))


def weak_overlap_constant(omega, p_b, delta: float) -> float:
    """Smallest ``C`` with ``P_{p_b}(omega^(1+delta) >= x) <= C / x`` for all ``x > 0``."""
    omega = np.asarray(omega, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    n = min(len(omega), len(p_b))
    powered = omega[:n] ** (1.0 + delta)
    mass = p_b[:n]
    order = np.argsort(-powered)
    tail = np.cumsum(mass[order])
    return float(np.max(powered[order] * tail, initial=0.0))
