"""Experiment configuration: dataclass, INI-style file format and desk-scale presets.

File format: one ``key = value`` per line, grouped in sections::

    [experiment]
    name = exp1
    seed = 20240601
    replications = 500
    horizons = 50, 600, 7200
    reference_replications = 50000

    [setup]
    kind = chain            ; chain | queue
    num_states = 20         ; chain
    reset_prob = 0.5        ; chain
    lambda0 = 0.1           ; queue
    lambda1 = 0.9           ; queue
    s_max = 500             ; queue truncation for oracles
    burn_in = 1000          ; queue burn-in before each evaluation trajectory

    [policy]
    behavior = 0.2
    evaluation = 1.0

    [objective]
    kind = discounted       ; discounted | longrun
    gamma = 0.5
    p0 = evaluation         ; evaluation | behavior | state:<id>

    [nuisance]
    q = td                  ; td | exact
    omega = exact           ; exact | moment_matching
    train_length = 10000
    rate = 0.03
    rate_theta = 0.03       ; longrun TD only
    epochs = 1
    perturb_q = 0.0         ; sd of Gaussian noise added to q
    perturb_omega = 0.0     ; omega multiplied by Uniform[1-a, 1+a]

    [estimators]
    schedules = none, t:0.7, T:0.7

    [lepski]
    grid = t:1, t:0.6, t:0.3, t:0.1, t:0.01
    B = 100
    z = 1.0
    block_len =             ; empty means floor(T^(1/3))
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from typing import Optional

from .adaptive import LepskiConfig
from .estimators import TruncationSchedule
from .exceptions import ConfigError
from .mdp import ChainMdp, MdpSpec, PolicyTable, QueueMdp


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    mdp: MdpSpec
    u_b: float
    u_e: float
    objective: str = "discounted"
    gamma: Optional[float] = 0.5
    p0: str = "evaluation"
    q_source: str = "td"
    omega_source: str = "exact"
    train_length: int = 10_000
    rate: float = 0.03
    rate_theta: float = 0.03
    epochs: int = 1
    perturb_q: float = 0.0
    perturb_omega: float = 0.0
    schedules: tuple = (TruncationSchedule(),)
    lepski: Optional[LepskiConfig] = None
    horizons: tuple = (600,)
    replications: int = 100
    seed: int = 0
    s_max: int = 500
    burn_in: int = 1000
    reference_replications: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.horizons or any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ConfigError("horizons must be non-empty and strictly increasing")
        if any(T < 1 for T in self.horizons):
            raise ConfigError("horizons must be positive")
        if self.objective not in ("discounted", "longrun"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.objective == "discounted" and not (self.gamma is not None and 0 < self.gamma < 1):
            raise ConfigError("discounted objective needs gamma in (0, 1)")
        if self.q_source not in ("td", "exact"):
            raise ConfigError(f"unknown q source {self.q_source!r}")
        if self.omega_source not in ("exact", "moment_matching"):
            raise ConfigError(f"unknown omega source {self.omega_source!r}")
        for u in (self.u_b, self.u_e):
            if not 0 <= u <= 1:
                raise ConfigError("treatment probabilities must lie in [0, 1]")
        if not self.schedules and self.lepski is None:
            raise ConfigError("configure at least one schedule or a Lepski grid")
        if not (self.p0 in ("evaluation", "behavior") or self.p0.startswith("state:")):
            raise ConfigError(f"unknown p0 descriptor {self.p0!r}")

    @property
    def pi_b(self) -> PolicyTable:
        return PolicyTable.constant(self.u_b)

    @property
    def pi_e(self) -> PolicyTable:
        return PolicyTable.constant(self.u_e)

    @property
    def setup(self) -> str:
        return "chain" if isinstance(self.mdp, ChainMdp) else "queue"

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


_KNOWN = {
    "experiment": {"name", "seed", "replications", "horizons", "reference_replications", "threads"},
    "setup": {"kind", "num_states", "reset_prob", "lambda0", "lambda1", "s_max", "burn_in"},
    "policy": {"behavior", "evaluation"},
    "objective": {"kind", "gamma", "p0"},
    "nuisance": {"q", "omega", "train_length", "rate", "rate_theta", "epochs", "perturb_q", "perturb_omega"},
    "estimators": {"schedules"},
    "lepski": {"grid", "b", "z", "block_len"},
}


def _split(text: str) -> list:
    return [part.strip() for part in text.split(",") if part.strip()]


def parse_config(text: str) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from the INI-style text format."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(parser[section]) - _KNOWN[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")

    def get(section, key, default=None, conv=str):
        if not parser.has_option(section, key) or parser.get(section, key).strip() == "":
            if default is ...:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        raw = parser.get(section, key).strip()
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc

    kind = get("setup", "kind", ...)
    if kind == "chain":
        mdp = ChainMdp(get("setup", "num_states", 20, int), get("setup", "reset_prob", 0.5, float))
    elif kind == "queue":
        mdp = QueueMdp(get("setup", "lambda0", 0.1, float), get("setup", "lambda1", 0.9, float))
    else:
        raise ConfigError(f"unknown setup kind {kind!r}")

    try:
        schedules = tuple(TruncationSchedule.parse(s) for s in _split(get("estimators", "schedules", "none")))
        lepski = None
        if parser.has_section("lepski"):
            lepski = LepskiConfig(
                grid=[TruncationSchedule.parse(s) for s in _split(get("lepski", "grid", ...))],
                B=get("lepski", "b", 100, int),
                z=get("lepski", "z", 1.96, float),
                block_len=get("lepski", "block_len", None, int),
            )
        horizons = tuple(int(h) for h in _split(get("experiment", "horizons", ...)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    objective = get("objective", "kind", "discounted")
    return ExperimentConfig(
        name=get("experiment", "name", "experiment"),
        mdp=mdp,
        u_b=get("policy", "behavior", ..., float),
        u_e=get("policy", "evaluation", ..., float),
        objective=objective,
        gamma=get("objective", "gamma", 0.5 if objective == "discounted" else None, float),
        p0=get("objective", "p0", "evaluation"),
        q_source=get("nuisance", "q", "td"),
        omega_source=get("nuisance", "omega", "exact"),
        train_length=get("nuisance", "train_length", 10_000, int),
        rate=get("nuisance", "rate", 0.03, float),
        rate_theta=get("nuisance", "rate_theta", get("nuisance", "rate", 0.03, float), float),
        epochs=get("nuisance", "epochs", 1, int),
        perturb_q=get("nuisance", "perturb_q", 0.0, float),
        perturb_omega=get("nuisance", "perturb_omega", 0.0, float),
        schedules=schedules,
        lepski=lepski,
        horizons=horizons,
        replications=get("experiment", "replications", 100, int),
        seed=get("experiment", "seed", 0, int),
        s_max=get("setup", "s_max", 500, int),
        burn_in=get("setup", "burn_in", 1000, int),
        reference_replications=get("experiment", "reference_replications", None, int),
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` (comments are not preserved)."""
    lines = ["[experiment]", f"name = {cfg.name}", f"seed = {cfg.seed}",
             f"replications = {cfg.replications}", "horizons = " + ", ".join(str(h) for h in cfg.horizons)]
    if cfg.reference_replications:
        lines.append(f"reference_replications = {cfg.reference_replications}")
    lines += ["", "[setup]"]
    if isinstance(cfg.mdp, ChainMdp):
        lines += ["kind = chain", f"num_states = {cfg.mdp.num_states}", f"reset_prob = {cfg.mdp.reset_prob}"]
    else:
        lines += ["kind = queue", f"lambda0 = {cfg.mdp.lambda0}", f"lambda1 = {cfg.mdp.lambda1}",
                  f"s_max = {cfg.s_max}", f"burn_in = {cfg.burn_in}"]
    lines += ["", "[policy]", f"behavior = {cfg.u_b}", f"evaluation = {cfg.u_e}",
              "", "[objective]", f"kind = {cfg.objective}"]
    if cfg.objective == "discounted":
        lines += [f"gamma = {cfg.gamma}", f"p0 = {cfg.p0}"]
    lines += ["", "[nuisance]", f"q = {cfg.q_source}", f"omega = {cfg.omega_source}",
              f"train_length = {cfg.train_length}", f"rate = {cfg.rate}", f"rate_theta = {cfg.rate_theta}",
              f"epochs = {cfg.epochs}", f"perturb_q = {cfg.perturb_q}", f"perturb_omega = {cfg.perturb_omega}",
              "", "[estimators]", "schedules = " + ", ".join(_sched_text(s) for s in cfg.schedules)]
    if cfg.lepski is not None:
        lines += ["", "[lepski]", "grid = " + ", ".join(_sched_text(s) for s in cfg.lepski.grid),
                  f"B = {cfg.lepski.B}", f"z = {cfg.lepski.z}",
                  f"block_len = {'' if cfg.lepski.block_len is None else cfg.lepski.block_len}"]
    return "\n".join(lines) + "\n"


def _sched_text(s: TruncationSchedule) -> str:
    if s.mode == "none":
        return "none"
    if s.mode == "fixed":
        return f"fixed:{s.level!r}"
    return f"{s.mode}:{s.alpha!r}"


# ---------------------------------------------------------------------------
# desk-scale presets of the six experiments
# ---------------------------------------------------------------------------

DEFAULT_SEED = 20240601
LEPSKI_GRID = tuple(TruncationSchedule("t", d) for d in (1.0, 0.6, 0.3, 0.1, 0.01))


def _chain_base(name, **kw) -> ExperimentConfig:
    base = dict(
        name=name, mdp=ChainMdp(20, 0.5), u_b=0.2, u_e=1.0, objective="discounted", gamma=0.5,
        p0="evaluation", q_source="td", omega_source="exact", train_length=10_000, rate=0.03,
        seed=DEFAULT_SEED,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def preset(name: str) -> ExperimentConfig:
    """Desk-scale versions of experiments ``exp1`` .. ``exp6``."""
    t07 = TruncationSchedule("t", 0.7)
    T07 = TruncationSchedule("T", 0.7)
    none = TruncationSchedule()
    if name == "exp1":
        return _chain_base("exp1", schedules=(none, t07, T07), horizons=(50, 600, 7200),
                           replications=500, reference_replications=50_000)
    if name == "exp2":
        return ExperimentConfig(
            name="exp2", mdp=QueueMdp(0.1, 0.9), u_b=0.1, u_e=1.0, objective="longrun", gamma=None,
            q_source="td", omega_source="exact", train_length=5000, rate=0.05, rate_theta=0.05,
            schedules=(none, t07, T07), horizons=(256, 512, 1024, 2048, 4096), replications=500,
            seed=DEFAULT_SEED, reference_replications=10_000,
        )
    if name.startswith("exp3"):
        # exp3 or exp3-0.7 style names select the lambda1 value
        lam1 = float(name.split("-", 1)[1]) if "-" in name else 0.9
        return ExperimentConfig(
            name=f"exp3-{lam1:g}", mdp=QueueMdp(0.1, lam1), u_b=0.3, u_e=1.0, objective="discounted",
            gamma=0.5, p0="evaluation", q_source="td", omega_source="exact", train_length=10_000, rate=0.03,
            schedules=(none, TruncationSchedule("t", 0.4), TruncationSchedule("t", 0.5)),
            horizons=(500,), replications=1000, seed=DEFAULT_SEED, reference_replications=20_000,
        )
    if name == "exp4":
        return _chain_base("exp4", schedules=LEPSKI_GRID, lepski=LepskiConfig(LEPSKI_GRID, B=100, z=1.0),
                           horizons=(600, 7200), replications=300, reference_replications=10_000)
    if name == "exp5":
        return _chain_base("exp5", omega_source="moment_matching", train_length=200_000,
                           schedules=LEPSKI_GRID, lepski=LepskiConfig(LEPSKI_GRID, B=100, z=1.0),
                           horizons=(600, 7200), replications=300, reference_replications=10_000)
    if name == "exp6":
        grid = tuple(TruncationSchedule("t", d / 10) for d in range(1, 11))
        return _chain_base("exp6", omega_source="moment_matching", train_length=200_000,
                           schedules=grid, horizons=(600,), replications=2000, reference_replications=100_000)
    raise ConfigError(f"unknown preset {name!r}")


PRESETS = ("exp1", "exp2", "exp3", "exp4", "exp5", "exp6")
