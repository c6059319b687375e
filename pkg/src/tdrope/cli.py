"""Command line interface.

Exit codes: 0 on success, 2 on a configuration or input error, 3 on a
numerical failure (non-convergence, overlap violation, degenerate weights).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io as tio
from .adaptive import LepskiConfig, lepski_select
from .config import PRESETS, format_config, load_config, preset
from .estimators import TruncationSchedule, tdr_discounted, tdr_longrun
from .exceptions import ConfigError, ConvergenceError, DegenerateWeightsError, OverlapViolationError
from .harness import initial_law, prepare_nuisances, run_experiment, simulate, stationary_law, stream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("tdrope")


def _config(args):
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ConfigError("give either --config or --preset, not both")
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    else:
        raise ConfigError("a --config file or a --preset is required")
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        changes["replications"] = args.replications
    if getattr(args, "horizons", None):
        changes["horizons"] = tuple(args.horizons)
    return cfg.with_(**changes) if changes else cfg


def _schedule(text):
    try:
        return TruncationSchedule.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seed = cfg.seed if args.seed is None else args.seed
    traj = simulate(cfg, args.T, [stream(seed, 0)])[0]
    tio.write_trajectory(args.out, traj)
    log.info("wrote %d steps to %s", len(traj), args.out)
    return EXIT_OK


def cmd_nuisances(args) -> int:
    cfg = _config(args)
    nuis = prepare_nuisances(cfg)
    tio.write_qtable(args.q_out, nuis.q_hat)
    tio.write_omega(args.omega_out, nuis.omega_hat)
    print(f"truth={nuis.truth!r}")
    return EXIT_OK


def _estimator(cfg, q_hat, omega_hat):
    if cfg.objective == "discounted":
        p0 = initial_law(cfg, stationary_law(cfg, cfg.pi_e), stationary_law(cfg, cfg.pi_b))
        return lambda traj, sched: tdr_discounted(traj, q_hat, omega_hat, cfg.pi_e, cfg.pi_b, cfg.gamma, p0, sched)
    return lambda traj, sched: tdr_longrun(traj, q_hat, omega_hat, cfg.pi_e, cfg.pi_b, sched)


def cmd_estimate(args) -> int:
    cfg = _config(args)
    traj = tio.read_trajectory(args.trajectory)
    run = _estimator(cfg, tio.read_qtable(args.q), tio.read_omega(args.omega))
    schedules = args.schedule or list(cfg.schedules)
    results = [run(traj, s) for s in schedules]
    if args.out:
        tio.write_estimator_results(args.out, results)
    for r in results:
        print(f"{r.estimator} {r.schedule.label}: {r.estimate:.6f} (truncated {r.n_truncated}/{r.T})")
    return EXIT_OK


def cmd_lepski(args) -> int:
    cfg = _config(args)
    lep = cfg.lepski
    if args.grid:
        lep = LepskiConfig(args.grid, B=lep.B if lep else 100, z=lep.z if lep else 1.96)
    if lep is None:
        raise ConfigError("no Lepski grid: add a [lepski] section or pass --grid")
    if args.B is not None or args.z is not None:
        lep = LepskiConfig(lep.grid, B=args.B or lep.B, z=lep.z if args.z is None else args.z, block_len=lep.block_len)
    traj = tio.read_trajectory(args.trajectory)
    run = _estimator(cfg, tio.read_qtable(args.q), tio.read_omega(args.omega))
    seed = cfg.seed if args.seed is None else args.seed
    outcome = lepski_select(traj, lep, lambda tr, s: run(tr, s).estimate, stream(seed, 0))
    if args.out:
        tio.write_lepski(args.out, outcome)
    print(f"selected {outcome.schedule.label}: {outcome.estimate:.6f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    result = run_experiment(cfg, out=out, threads=args.threads, progress=log.info)
    for rec in result.records:
        print(f"T={rec.T:<6d} {rec.schedule:<10s} mse={rec.mse:.5g} bias={rec.bias:.4g} var={rec.variance:.4g}")
    return EXIT_OK


def cmd_config(args) -> int:
    text = format_config(preset(args.preset))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdrope", description="Truncated doubly robust off-policy evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def source(p):
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--preset", choices=PRESETS + ("exp3-0.3", "exp3-0.5", "exp3-0.7", "exp3-0.9"))
        p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="sample a behavior-policy trajectory to CSV")
    source(p)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("nuisances", help="fit or compute q and omega tables to CSV")
    source(p)
    p.add_argument("--q-out", required=True)
    p.add_argument("--omega-out", required=True)
    p.set_defaults(func=cmd_nuisances)

    for name, func, helptext in (("estimate", cmd_estimate, "DR/TDR estimates from CSV inputs"),
                                 ("lepski", cmd_lepski, "Lepski truncation choice from CSV inputs")):
        p = sub.add_parser(name, help=helptext)
        source(p)
        p.add_argument("--trajectory", required=True)
        p.add_argument("--q", required=True)
        p.add_argument("--omega", required=True)
        p.add_argument("--out")
        if name == "estimate":
            p.add_argument("--schedule", action="append", type=_schedule, help="e.g. none, t:0.7, T:0.7")
        else:
            p.add_argument("--grid", nargs="+", type=_schedule)
            p.add_argument("--B", type=int)
            p.add_argument("--z", type=float)
        p.set_defaults(func=func)

    p = sub.add_parser("experiment", help="run a replication sweep and write the results CSV")
    source(p)
    p.add_argument("--replications", type=int)
    p.add_argument("--horizons", type=int, nargs="+")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("config", help="print a preset as a config file")
    p.add_argument("--preset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConvergenceError, OverlapViolationError, DegenerateWeightsError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
