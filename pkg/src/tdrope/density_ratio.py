"""State density ratios: exact ratios from stationary laws and moment-matching estimates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ConvergenceError, OverlapViolationError
from .mdp import MdpSpec, PolicyTable, Trajectory, policy_kernel, policy_ratio

LONGRUN = "longrun"
DISCOUNTED = "discounted"


@dataclass(frozen=True)
class DensityRatioTable:
    """Nonnegative ratio ``omega(s)`` on a dense state-indexed grid.

    States outside the grid read as ``default``.
    """

    values: np.ndarray
    kind: str = LONGRUN
    gamma: Optional[float] = None
    p0: Optional[str] = None
    default: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("ratio values must be one-dimensional")
        if np.any(values < 0):
            raise ValueError("density ratios must be nonnegative")
        object.__setattr__(self, "values", values)

    @property
    def n_states(self) -> int:
        return len(self.values)

    def known(self, states) -> np.ndarray:
        states = np.asarray(states)
        return (states >= 0) & (states < self.n_states)

    def lookup(self, states) -> np.ndarray:
        states = np.asarray(states)
        inside = self.known(states)
        out = np.full(states.shape, self.default, dtype=float)
        out[inside] = self.values[states[inside]]
        return out

    def scaled(self, factors) -> "DensityRatioTable":
        return DensityRatioTable(self.values * factors, self.kind, self.gamma, self.p0, self.default)


def exact_omega(p_e, p_b) -> DensityRatioTable:
    """Pointwise ratio ``p_e / p_b`` (0 where both vanish)."""
    p_e = np.asarray(p_e, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    n = max(len(p_e), len(p_b))
    p_e = np.pad(p_e, (0, n - len(p_e)))
    p_b = np.pad(p_b, (0, n - len(p_b)))
    if np.any((p_b <= 0) & (p_e > 0)):
        raise OverlapViolationError("behavior stationary law misses states the evaluation law visits")
    omega = np.zeros(n)
    pos = p_b > 0
    omega[pos] = p_e[pos] / p_b[pos]
    return DensityRatioTable(omega, LONGRUN)


def discounted_occupancy(mdp: MdpSpec, pi_e: PolicyTable, p0, gamma: float, s_max: int = 500, tol: float = 1e-14):
    """``(1 - gamma) sum_t gamma^t p0 P^t``, truncated once ``gamma^t < tol``."""
    P = policy_kernel(mdp, pi_e, s_max)
    p0 = np.asarray(p0, dtype=float)
    p0 = np.pad(p0, (0, P.shape[0] - len(p0)))
    acc = np.zeros_like(p0)
    term = p0.copy()
    weight = 1.0 - gamma
    while True:
        acc += weight * term
        weight *= gamma
        if weight < tol * (1.0 - gamma):
            break
        term = term @ P
    return acc / acc.sum()


def exact_omega_discounted(
    mdp: MdpSpec,
    pi_e: PolicyTable,
    p0,
    p_b,
    gamma: float,
    s_max: int = 500,
    tol: float = 1e-14,
) -> DensityRatioTable:
    """Discounted ratio ``p_e^gamma(.; p0) / p_b``."""
    occ = discounted_occupancy(mdp, pi_e, p0, gamma, s_max, tol)
    table = exact_omega(occ, p_b)
    return DensityRatioTable(table.values, DISCOUNTED, gamma, "custom")


# ---------------------------------------------------------------------------
# constrained least squares
# ---------------------------------------------------------------------------


def nnls(A: np.ndarray, b: np.ndarray, max_iter: Optional[int] = None) -> np.ndarray:
    """Lawson-Hanson active-set solution of ``min ||A x - b||`` subject to ``x >= 0``."""
    m, n = A.shape
    max_iter = 30 * n if max_iter is None else max_iter
    tol = 10 * np.finfo(float).eps * np.linalg.norm(A, 1) * max(m, n)
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ (b - A @ x)
    it = 0
    while not passive.all() and (w[~passive].max() > tol):
        j = np.flatnonzero(~passive)[np.argmax(w[~passive])]
        passive[j] = True
        while True:
            it += 1
            if it > max_iter:
                raise ConvergenceError("NNLS iteration cap exceeded", float(np.abs(w[~passive]).max(initial=0.0)))
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                break
            blocking = passive & (z <= 0)
            alpha = np.min(x[blocking] / (x[blocking] - z[blocking]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
        x = z
        w = A.T @ (b - A @ x)
    return x


def kkt_residual(H: np.ndarray, c: np.ndarray, beta: np.ndarray) -> float:
    """Largest violation of the KKT conditions of ``min ||H b||^2 : c'b = 1, b >= 0``.

    Gradient terms are scaled by the size of ``H'H`` so the residual is
    dimensionless.
    """
    G = H.T @ H
    grad = 2.0 * G @ beta
    scale = max(2.0 * np.abs(G).max(), 1e-300) * max(np.abs(beta).max(), 1.0)
    free = beta > 1e-12 * max(beta.max(), 1.0)
    cf = c[free]
    if free.any() and np.any(cf != 0):
        mu = float(grad[free] @ cf / (cf @ cf))
    else:
        mu = 0.0
    reduced = grad - mu * c
    stationarity = np.abs(reduced[free]).max(initial=0.0) / scale
    dual = max(-reduced[~free].min(initial=0.0), 0.0) / scale
    primal = max(abs(c @ beta - 1.0), max(-beta.min(), 0.0))
    return float(max(stationarity, dual, primal))


def solve_constrained_ls(H, c, tol: float = 1e-9) -> np.ndarray:
    """Minimize ``||H beta||^2`` over ``{beta >= 0, c' beta = 1}``.

    The problem is rewritten as the nonnegative least squares problem
    ``min_{z >= 0} ||H z||^2 + (c' z - 1)^2``.  Writing ``z = s * y`` with
    ``c' y = 1`` splits it into ``s^2 g(y) + (s - 1)^2``, so the minimizer has
    ``s = 1 / (1 + g*) > 0`` and ``beta = z / (c' z)`` solves the original
    problem.  ``H`` is rescaled to the size of ``c`` first, which leaves the
    minimizer unchanged.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    c = np.asarray(c, dtype=float).ravel()
    if H.shape[1] != len(c):
        raise ValueError("H and c dimensions disagree")
    if not np.any(c > 0):
        raise ValueError("c needs a positive entry for a feasible point to exist")
    h_norm = np.linalg.norm(H)
    Hs = H * (np.linalg.norm(c) / h_norm) if h_norm > 0 else H
    A = np.vstack([Hs, c[None, :]])
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    z = nnls(A, b)
    s = c @ z
    if s <= 0:
        raise ConvergenceError("degenerate constrained least squares solution", float("inf"))
    beta = z / s
    resid = kkt_residual(Hs, c, beta)
    if resid > tol * 1e3:
        raise ConvergenceError("constrained least squares KKT conditions not met", resid)
    return beta


def estimate_omega_moment_matching(
    traj: Trajectory,
    pi_b: PolicyTable,
    pi_e: PolicyTable,
    m: Optional[int] = None,
) -> DensityRatioTable:
    """Density ratio by empirical moment matching over indicator test functions.

    Uses every transition tuple of ``traj``: importance weights ``eta_t``,
    visit counts ``N_j``, the weighted transition matrix
    ``M[j, i] = sum_t 1(S_t = i, S'_t = j) eta_t``, ``H = diag(N) - M`` and
    ``c = N / n_transitions``, then solves the constrained least squares
    problem.  States never visited as ``S_t`` are pinned to 0 and dropped
    from the program (rows and columns).  ``m`` is the length of the
    state-indexed output; by default the largest observed state plus one.
    """
    if len(traj) < 1:
        raise ValueError("moment matching needs at least one transition")
    S = np.asarray(traj.states)
    S2 = np.asarray(traj.next_states)
    top = int(max(S.max(), S2.max())) + 1
    m = top if m is None else max(int(m), top)
    eta = policy_ratio(pi_e, pi_b, S, traj.actions)
    N = np.bincount(S, minlength=m).astype(float)
    M = np.zeros((m, m))
    np.add.at(M, (S2, S), eta)
    visited = N > 0
    if not visited.any():
        raise ValueError("no visited states: constraint set is empty")
    H = np.diag(N) - M
    c = N / len(S)
    idx = np.flatnonzero(visited)
    beta = solve_constrained_ls(H[np.ix_(idx, idx)], c[idx])
    omega = np.zeros(m)
    omega[idx] = np.maximum(beta, 0.0)
    return DensityRatioTable(omega, LONGRUN)
