"""Data-driven truncation choice: moving block bootstrap intervals and Lepski selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .estimators import TruncationSchedule
from .exceptions import TdropeError
from .mdp import Trajectory


@dataclass(frozen=True)
class LepskiConfig:
    """Grid and bootstrap settings for Lepski selection.

    ``grid`` runs from the weakest truncation (lowest bias) to the strongest.
    ``block_len=None`` means ``floor(T ** (1/3))`` for a length-``T`` trajectory.
    """

    grid: Sequence[TruncationSchedule]
    B: int = 100
    z: float = 1.96
    block_len: Optional[int] = None

    def __post_init__(self):
        if len(self.grid) == 0:
            raise ValueError("Lepski grid must not be empty")
        if self.B < 2:
            raise ValueError("need at least two bootstrap draws")
        if self.block_len is not None and self.block_len < 1:
            raise ValueError("block length must be at least 1")
        object.__setattr__(self, "grid", tuple(self.grid))

    def block_length(self, T: int) -> int:
        ell = self.block_len if self.block_len is not None else int(math.floor(T ** (1.0 / 3.0) + 1e-9))
        if not 1 <= ell <= T:
            raise ValueError(f"block length {ell} outside 1..{T}")
        return ell


@dataclass(frozen=True)
class BootstrapInterval:
    mean: float
    sd: float
    lo: float
    hi: float


@dataclass(frozen=True)
class LepskiOutcome:
    selected_index: int
    intervals: list
    estimates: list
    grid: tuple = field(default=())

    @property
    def estimate(self) -> float:
        """Full-data estimate at the selected truncation."""
        return self.estimates[self.selected_index]

    @property
    def schedule(self) -> TruncationSchedule:
        return self.grid[self.selected_index]

    def csv_rows(self) -> list:
        rows = []
        for g, (sched, ci) in enumerate(zip(self.grid, self.intervals)):
            rows.append([g, repr(sched.alpha), repr(ci.mean), repr(ci.sd), repr(ci.lo), repr(ci.hi),
                         int(g == self.selected_index)])
        return rows


CSV_HEADER = ["grid_index", "alpha", "mean", "sd", "lo", "hi", "selected"]


def block_indices(T: int, block_len: int, rng: np.random.Generator) -> np.ndarray:
    """Tuple indices of one moving-block resample of length ``T``."""
    if not 1 <= block_len <= T:
        raise ValueError(f"block length {block_len} outside 1..{T}")
    k = -(-T // block_len)
    starts = rng.integers(0, T - block_len + 1, size=k)
    return (starts[:, None] + np.arange(block_len)[None, :]).ravel()[:T]


def moving_block_resample(traj: Trajectory, block_len: int, rng: np.random.Generator) -> Trajectory:
    """Concatenate ``ceil(T / block_len)`` overlapping blocks drawn with replacement.

    Every tuple keeps its own next state, so block seams never create
    transitions that were not observed.
    """
    return traj.take(block_indices(len(traj), block_len, rng))


def _interval(draws: np.ndarray, z: float) -> BootstrapInterval:
    # centring on the first draw keeps constant draws exact
    dev = draws - draws[0]
    mean = float(draws[0] + dev.mean())
    sd = float(dev.std(ddof=1))
    return BootstrapInterval(mean, sd, mean - z * sd, mean + z * sd)


def bootstrap_ci(
    traj: Trajectory,
    estimator: Callable[[Trajectory], float],
    B: int,
    block_len: int,
    z: float,
    rng: np.random.Generator,
    max_retries: int = 20,
) -> BootstrapInterval:
    """Bootstrap mean and standard deviation (``B - 1`` divisor), interval ``mean +- z sd``.

    A draw on which ``estimator`` fails is redrawn, at most ``max_retries``
    times in total.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap draws")
    draws = np.empty(B)
    retries = 0
    b = 0
    while b < B:
        sample = moving_block_resample(traj, block_len, rng)
        try:
            draws[b] = estimator(sample)
        except (TdropeError, ArithmeticError):
            retries += 1
            if retries > max_retries:
                raise
            continue
        b += 1
    return _interval(draws, z)


def bootstrap_ci_batched(
    T: int,
    batch_estimator: Callable[[np.ndarray], np.ndarray],
    B: int,
    block_len: int,
    z: float,
    rng: np.random.Generator,
) -> BootstrapInterval:
    """:func:`bootstrap_ci` for estimators that accept a ``(B, T)`` matrix of tuple indices.

    Indices are drawn in the same order as the one-at-a-time path, so both
    give the same interval whenever no draw has to be redrawn.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap draws")
    idx = np.stack([block_indices(T, block_len, rng) for _ in range(B)])
    draws = np.asarray(batch_estimator(idx), dtype=float)
    if not np.all(np.isfinite(draws)):
        raise TdropeError("non-finite bootstrap draw in batched path")
    return _interval(draws, z)


def lepski_index(intervals: Sequence[BootstrapInterval]) -> int:
    """Last index whose interval meets every earlier one (running intersection)."""
    lo, hi = intervals[0].lo, intervals[0].hi
    chosen = 0
    for g in range(1, len(intervals)):
        lo = max(lo, intervals[g].lo)
        hi = min(hi, intervals[g].hi)
        if lo > hi:
            break
        chosen = g
    return chosen


def lepski_select(
    traj: Trajectory,
    config: LepskiConfig,
    estimator: Callable[[Trajectory, TruncationSchedule], float],
    rng: np.random.Generator,
    batch_estimator: Optional[Callable[[np.ndarray, TruncationSchedule], np.ndarray]] = None,
) -> LepskiOutcome:
    """Pick the truncation schedule by Lepski's method.

    ``estimator(traj, schedule)`` evaluates TDR with fixed nuisances; only the
    evaluation trajectory is resampled.  ``batch_estimator(index, schedule)``,
    when given, evaluates all bootstrap resamples of ``traj`` at once from a
    ``(B, T)`` index matrix and must agree with ``estimator`` on each row.
    """
    T = len(traj)
    ell = config.block_length(T)
    intervals = []
    for sched in config.grid:
        if batch_estimator is not None:
            ci = bootstrap_ci_batched(T, lambda idx, s=sched: batch_estimator(idx, s), config.B, ell, config.z, rng)
        else:
            ci = bootstrap_ci(traj, lambda tr, s=sched: estimator(tr, s), config.B, ell, config.z, rng)
        intervals.append(ci)
    estimates = [float(estimator(traj, sched)) for sched in config.grid]
    return LepskiOutcome(lepski_index(intervals), intervals, estimates, config.grid)
