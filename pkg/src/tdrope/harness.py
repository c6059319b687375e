"""Replication sweeps: ground truth, nuisance preparation, aggregation and CSV emission.

Random streams are derived from ``(config.seed, namespace, ...)`` with
:class:`numpy.random.SeedSequence` spawn keys:

* nuisance training trajectory: ``(TRAIN_NS,)``
* nuisance perturbations: ``(PERTURB_NS,)``
* evaluation trajectory of replication ``rep`` at horizon ``T``: ``(EVAL_NS, T, rep)``
* its block bootstrap: ``(BOOT_NS, T, rep)``

so every replication is reproducible on its own, whatever batch or thread
it runs in.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .adaptive import LepskiOutcome, lepski_select
from .config import ExperimentConfig
from .density_ratio import (
    DensityRatioTable,
    estimate_omega_moment_matching,
    exact_omega,
    exact_omega_discounted,
)
from .estimators import EstimatorResult, TruncationSchedule, initial_value, tdr_discounted, tdr_longrun
from .exceptions import ConvergenceError, TdropeError
from .mdp import (
    ChainMdp,
    PolicyTable,
    Trajectory,
    make_rng,
    policy_ratio,
    rollout,
    sample_initial,
    stationary_chain,
    stationary_numeric,
)
from .value_learning import (
    DIFFERENTIAL,
    DISCOUNTED,
    QTable,
    exact_q_differential,
    exact_q_discounted,
    td_differential,
    td_discounted,
    value_from_q,
)

TRAIN_NS = 1
EVAL_NS = 2
BOOT_NS = 3
PERTURB_NS = 4

LEPSKI_LABEL = "lepski"
BATCH = 256


def stream(seed: int, *key: int) -> np.random.Generator:
    return make_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def state_space_size(config: ExperimentConfig) -> int:
    """Length of state-indexed arrays: ``Q + 1`` for the chain, ``s_max + 1`` for the queue."""
    return config.mdp.size(config.s_max)


def stationary_law(config: ExperimentConfig, policy: PolicyTable) -> np.ndarray:
    mdp = config.mdp
    if isinstance(mdp, ChainMdp) and not policy.treat_prob:
        return stationary_chain(policy.default_prob, mdp.reset_prob, mdp.num_states)
    return stationary_numeric(mdp, policy, s_max=config.s_max)


def initial_law(config: ExperimentConfig, p_e=None, p_b=None) -> np.ndarray:
    """State-indexed ``p0`` named by ``config.p0``."""
    if config.p0 == "evaluation":
        return stationary_law(config, config.pi_e) if p_e is None else p_e
    if config.p0 == "behavior":
        return stationary_law(config, config.pi_b) if p_b is None else p_b
    state = int(config.p0.split(":", 1)[1])
    config.mdp.check_states([state])
    p0 = np.zeros(state_space_size(config))
    p0[state] = 1.0
    return p0


def ground_truth(config: ExperimentConfig) -> float:
    """Oracle target: ``(1-gamma) sum p0 v`` (discounted) or ``sum p_e r`` (long-run)."""
    mdp = config.mdp
    p_e = stationary_law(config, config.pi_e)
    if config.objective == "longrun":
        return float(p_e @ mdp.mean_reward(np.arange(len(p_e))))
    q = exact_q_discounted(mdp, config.pi_e, config.gamma, s_max=config.s_max)
    p0 = initial_law(config, p_e=p_e)
    v = value_from_q(q, config.pi_e, np.arange(len(p0)))
    return float((1.0 - config.gamma) * (p0 @ v))


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def simulate(config: ExperimentConfig, T: int, rngs: Sequence[np.random.Generator], p_b=None) -> list:
    """One behavior-policy trajectory of ``T`` tuples per generator.

    Each generator first yields ``u0`` for the initial state and then the
    ``(3, burn_in + T)`` driving noise.  Chain runs start from the behavior
    stationary law; queue runs start empty and discard ``burn_in`` steps.
    """
    queue = not isinstance(config.mdp, ChainMdp)
    burn = config.burn_in if queue else 0
    if not queue and p_b is None:
        p_b = stationary_law(config, config.pi_b)
    s0 = np.empty(len(rngs), dtype=np.int64)
    noise = np.empty((len(rngs), 3, burn + T))
    for i, rng in enumerate(rngs):
        u0 = rng.random()
        s0[i] = 0 if queue else sample_initial(p_b, u0)
        noise[i] = rng.random((3, burn + T))
    trajs = rollout(config.mdp, config.pi_b, s0, noise)
    if burn:
        trajs = [tr.take(slice(burn, None)) for tr in trajs]
    return trajs


# ---------------------------------------------------------------------------
# nuisances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Nuisances:
    q_hat: QTable
    omega_hat: DensityRatioTable
    p0: Optional[np.ndarray]
    p_b: np.ndarray
    p_e: np.ndarray
    truth: float


def prepare_nuisances(config: ExperimentConfig) -> Nuisances:
    """Fit or compute ``q`` and ``omega`` once per configuration."""
    mdp = config.mdp
    p_b = stationary_law(config, config.pi_b)
    p_e = stationary_law(config, config.pi_e)
    discounted = config.objective == "discounted"
    p0 = initial_law(config, p_e, p_b) if discounted else None
    n = state_space_size(config)
    table_size = n if isinstance(mdp, ChainMdp) else 1

    train = None
    if config.q_source == "td" or config.omega_source == "moment_matching":
        train = simulate(config, config.train_length, [stream(config.seed, TRAIN_NS)], p_b)[0]

    if config.q_source == "exact":
        if discounted:
            q_hat = exact_q_discounted(mdp, config.pi_e, config.gamma, s_max=config.s_max)
        else:
            q_hat = exact_q_differential(mdp, config.pi_e, s_max=config.s_max)
    elif discounted:
        q_hat = td_discounted(train, config.pi_e, config.gamma, config.rate,
                              QTable.zeros(table_size, DISCOUNTED, config.gamma), config.epochs)
    else:
        q_hat = td_differential(train, config.pi_e, config.rate, config.rate_theta,
                                QTable.zeros(table_size, DIFFERENTIAL), config.epochs)

    if config.omega_source == "moment_matching":
        m = n if isinstance(mdp, ChainMdp) else None
        omega_hat = estimate_omega_moment_matching(train, config.pi_b, config.pi_e, m)
    elif discounted:
        omega_hat = exact_omega_discounted(mdp, config.pi_e, p0, p_b, config.gamma, s_max=config.s_max)
    else:
        omega_hat = exact_omega(p_e, p_b)

    if config.perturb_q or config.perturb_omega:
        rng = stream(config.seed, PERTURB_NS)
        if config.perturb_q:
            q_hat = QTable(q_hat.values + rng.normal(0.0, config.perturb_q, q_hat.values.shape),
                           q_hat.kind, q_hat.gamma, q_hat.theta_hat, q_hat.default)
        if config.perturb_omega:
            a = config.perturb_omega
            omega_hat = omega_hat.scaled(rng.uniform(max(1.0 - a, 0.0), 1.0 + a, omega_hat.n_states))

    return Nuisances(q_hat, omega_hat, p0, p_b, p_e, ground_truth(config))


def estimator_for(config: ExperimentConfig, nuis: Nuisances) -> Callable[[Trajectory, TruncationSchedule], EstimatorResult]:
    """TDR with the configured objective and fixed nuisances."""
    if config.objective == "discounted":
        def run(traj, sched):
            return tdr_discounted(traj, nuis.q_hat, nuis.omega_hat, config.pi_e, config.pi_b,
                                  config.gamma, nuis.p0, sched)
    else:
        def run(traj, sched):
            return tdr_longrun(traj, nuis.q_hat, nuis.omega_hat, config.pi_e, config.pi_b, sched)
    return run


def batch_estimator_for(config: ExperimentConfig, nuis: Nuisances, traj: Trajectory):
    """Discounted TDR on many resamples of ``traj`` from a ``(B, T)`` index matrix.

    Per-tuple terms are computed once; a resample only gathers them, so each
    row equals :func:`estimator_for` applied to ``traj.take(row)``.  Returns
    ``None`` for the long-run objective, whose self-normalization can fail on
    a resample and then needs the redraw logic of the one-at-a-time path.
    """
    if config.objective != "discounted":
        return None
    S, A, R, S2 = traj.states, traj.actions, traj.rewards, traj.next_states
    omega = nuis.omega_hat.lookup(S)
    eta = policy_ratio(config.pi_e, config.pi_b, S, A)
    resid = R + config.gamma * value_from_q(nuis.q_hat, config.pi_e, S2) - nuis.q_hat.lookup(S, A)
    base = (1.0 - config.gamma) * initial_value(nuis.q_hat, config.pi_e, nuis.p0)

    def run(idx, sched):
        tau = sched.levels(idx.shape[1])
        return base + np.mean(np.minimum(omega[idx], tau) * eta[idx] * resid[idx], axis=1)

    return run


# ---------------------------------------------------------------------------
# replications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationResult:
    rep: int
    estimates: dict
    variances: dict
    lepski: Optional[LepskiOutcome] = None


def _replicate(config, nuis, T, reps) -> list:
    trajs = simulate(config, T, [stream(config.seed, EVAL_NS, T, r) for r in reps], nuis.p_b)
    run = estimator_for(config, nuis)
    out = []
    for rep, traj in zip(reps, trajs):
        estimates, variances = {}, {}
        for sched in config.schedules:
            res = run(traj, sched)
            estimates[sched.label] = res.estimate
            variances[sched.label] = res.plug_in_variance
        outcome = None
        if config.lepski is not None:
            outcome = lepski_select(traj, config.lepski, lambda tr, s: run(tr, s).estimate,
                                    stream(config.seed, BOOT_NS, T, rep),
                                    batch_estimator_for(config, nuis, traj))
            estimates[LEPSKI_LABEL] = outcome.estimate
        out.append(ReplicationResult(rep, estimates, variances, outcome))
    return out


def run_replication(config: ExperimentConfig, T: int, rep: int, nuisances: Optional[Nuisances] = None) -> ReplicationResult:
    """Estimates of every configured schedule (and Lepski) on replication ``rep``."""
    nuis = prepare_nuisances(config) if nuisances is None else nuisances
    return _replicate(config, nuis, T, [rep])[0]


def run_replications(config: ExperimentConfig, T: int, nuisances: Nuisances, reps: Optional[Sequence[int]] = None,
                     threads: int = 1) -> list:
    """Replications in batches; results are identical for any ``threads``."""
    reps = list(range(config.replications)) if reps is None else list(reps)
    size = BATCH if T <= 2000 else max(16, BATCH * 2000 // T)
    chunks = [reps[i:i + size] for i in range(0, len(reps), size)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: _replicate(config, nuisances, T, c), chunks))
    else:
        parts = [_replicate(config, nuisances, T, c) for c in chunks]
    return [r for part in parts for r in part]


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRecord:
    """Summary of one (horizon, schedule) cell.

    ``variance`` uses the ``R - 1`` divisor and ``mse`` the mean squared
    deviation from the truth, so ``mse == bias**2 + variance * (R - 1) / R``.
    ``relative_bias`` is the mean of ``|estimate - truth| / |truth|``;
    ``abs_relative_bias`` is ``|bias| / |truth|``.
    """

    config_id: str
    T: int
    schedule: str
    mse: float
    bias: float
    variance: float
    mean_estimate: float
    relative_bias: float
    abs_relative_bias: float
    n_replications: int
    truth: float
    wall_time: float = 0.0

    def identity_gap(self) -> float:
        n = self.n_replications
        return abs(self.mse - (self.bias ** 2 + self.variance * (n - 1) / n))

    def csv_row(self) -> list:
        return [self.config_id, self.T, self.schedule, self.n_replications, repr(self.mean_estimate),
                repr(self.bias), repr(self.variance), repr(self.mse), repr(self.relative_bias),
                repr(self.abs_relative_bias), repr(self.truth)]


RESULT_HEADER = ["config_id", "T", "schedule", "n_replications", "mean_estimate", "bias", "variance",
                 "mse", "relative_bias", "abs_relative_bias", "truth"]


def aggregate(estimates, oracle: float, config_id: str = "", T: int = 0, schedule: str = "",
              wall_time: float = 0.0) -> ResultRecord:
    x = np.asarray(estimates, dtype=float)
    if x.size < 1:
        raise ValueError("need at least one estimate")
    dev = x - oracle
    mean = float(x.mean())
    variance = float(x.var(ddof=1)) if x.size > 1 else 0.0
    scale = abs(oracle)
    rel = float(np.mean(np.abs(dev)) / scale) if scale > 0 else math.inf
    abs_rel = abs(mean - oracle) / scale if scale > 0 else math.inf
    return ResultRecord(config_id, int(T), schedule, float(np.mean(dev ** 2)), mean - oracle, variance, mean,
                        rel, abs_rel, int(x.size), float(oracle), wall_time)


def fit_rate_slope(records) -> float:
    """OLS slope of ``log(mse)`` on ``log(T)`` from ``(T, mse)`` pairs or records."""
    pairs = [(r.T, r.mse) if isinstance(r, ResultRecord) else tuple(r) for r in records]
    if len(pairs) < 3:
        raise ValueError("need at least three horizons")
    T = np.array([p[0] for p in pairs], dtype=float)
    mse = np.array([p[1] for p in pairs], dtype=float)
    if np.any(mse <= 0) or np.any(T <= 0):
        raise ValueError("mse and horizons must be positive for a log-log fit")
    x = np.log(T) - np.log(T).mean()
    y = np.log(mse) - np.log(mse).mean()
    return float(x @ y / (x @ x))


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    truth: float
    records: list = field(default_factory=list)
    selections: dict = field(default_factory=dict)
    replications: dict = field(default_factory=dict)

    def record(self, T: int, schedule: str) -> ResultRecord:
        for r in self.records:
            if r.T == T and r.schedule == schedule:
                return r
        raise KeyError((T, schedule))

    def series(self, schedule: str) -> list:
        return [r for r in self.records if r.schedule == schedule]


def header_lines(config: ExperimentConfig) -> list:
    lines = [f"# tdrope experiment {config.name}", f"# seed={config.seed}",
             "# horizons=" + " ".join(str(T) for T in config.horizons)]
    if config.reference_replications:
        factor = config.reference_replications / config.replications
        lines.append(f"# desk-scale replications={config.replications} reference={config.reference_replications} "
                     f"reduction={factor:g}x")
    else:
        lines.append(f"# replications={config.replications}")
    return lines


def write_results(path, config: ExperimentConfig, records, failure: Optional[str] = None) -> None:
    buf = io.StringIO()
    buf.write("\n".join(header_lines(config)) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_HEADER)
    for rec in records:
        writer.writerow(rec.csv_row())
    if failure is not None:
        buf.write(f"# FAILED: {failure}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_selections(path, config: ExperimentConfig, selections: dict) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["config_id", "T", "grid_index", "schedule", "count", "share"])
    for T, counts in selections.items():
        total = int(sum(counts))
        for g, (sched, count) in enumerate(zip(config.lepski.grid, counts)):
            writer.writerow([config.name, T, g, sched.label, int(count), repr(count / total)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def selection_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".selection.csv")


def run_experiment(config: ExperimentConfig, out=None, threads: int = 1, keep_replications: bool = False,
                   progress: Optional[Callable[[str], None]] = None) -> ExperimentResult:
    """Prepare nuisances, sweep horizons and replications, aggregate and emit CSV.

    On failure the records finished so far are written with a ``# FAILED``
    marker and the exception is re-raised.
    """
    nuis = prepare_nuisances(config)
    result = ExperimentResult(config, nuis.truth)
    labels = [s.label for s in config.schedules] + ([LEPSKI_LABEL] if config.lepski is not None else [])
    try:
        for T in config.horizons:
            start = time.perf_counter()
            reps = run_replications(config, T, nuis, threads=threads)
            elapsed = time.perf_counter() - start
            if keep_replications:
                result.replications[T] = reps
            for label in labels:
                values = [r.estimates[label] for r in reps]
                result.records.append(aggregate(values, nuis.truth, config.name, T, label, elapsed))
            if config.lepski is not None:
                counts = np.bincount([r.lepski.selected_index for r in reps], minlength=len(config.lepski.grid))
                result.selections[T] = counts.tolist()
            if progress is not None:
                progress(f"{config.name}: T={T} done in {elapsed:.1f}s")
    except (TdropeError, ArithmeticError, ValueError) as exc:
        if out is not None:
            write_results(out, config, result.records, failure=f"{type(exc).__name__}: {exc}")
        raise
    if out is not None:
        write_results(out, config, result.records)
        if result.selections:
            write_selections(selection_path(out), config, result.selections)
    return result


__all__ = [
    "ConvergenceError", "ExperimentResult", "Nuisances", "ReplicationResult", "ResultRecord", "aggregate",
    "fit_rate_slope", "ground_truth", "prepare_nuisances", "run_experiment", "run_replication",
    "run_replications", "simulate", "stationary_law",
]
