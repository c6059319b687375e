"""Truncated doubly robust off-policy evaluation for Markov decision processes."""
from .adaptive import LepskiConfig, LepskiOutcome, bootstrap_ci, lepski_select, moving_block_resample
from .config import ExperimentConfig, load_config, parse_config, preset
from .density_ratio import (
    DensityRatioTable,
    estimate_omega_moment_matching,
    exact_omega,
    exact_omega_discounted,
    solve_constrained_ls,
)
from .estimators import (
    EstimatorResult,
    TruncationSchedule,
    dr_discounted,
    dr_longrun,
    tdr_discounted,
    tdr_longrun,
    truncation_level,
)
from .exceptions import (
    ConfigError,
    ConvergenceError,
    DegenerateWeightsError,
    InvalidStateError,
    OverlapViolationError,
    TdropeError,
)
from .harness import aggregate, fit_rate_slope, ground_truth, run_experiment, run_replication
from .mdp import (
    ChainMdp,
    PolicyTable,
    QueueMdp,
    Trajectory,
    make_rng,
    sample_trajectory,
    stationary_chain,
    stationary_numeric,
)
from .value_learning import QTable, exact_q_differential, exact_q_discounted, td_differential, td_discounted, value_from_q

__version__ = "0.1.0"
