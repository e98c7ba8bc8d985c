"""Experiment configuration: nested dataclasses loaded from / dumped to YAML."""

import dataclasses
from dataclasses import dataclass, field

import yaml

from .errors import ChaosIdError
from . import io

METHODS = ("enks-em", "voden", "binn", "sr", "sr-hann", "af")
SCENARIOS = ("full", "s1", "s2")


class ConfigError(ChaosIdError, ValueError):
    """A configuration file or override is malformed; ``field`` names the culprit."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class SystemConfig:
    name: str = "lorenz63"
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0


@dataclass
class SimulationConfig:
    dt: float = 0.01
    T: int = 10000
    spinup: int = 1000
    x0: list = field(default_factory=lambda: [8.0, 0.0, 30.0])
    # x0 is jittered by ic_jitter * N(0, I) drawn from the seed before spin-up
    ic_jitter: float = 1.0
    seed: int = 0
    holdout_T: int = 20000
    holdout_seed: int = 1


@dataclass
class CorruptionConfig:
    variance: float = 0.5
    scenario: str = "full"
    seed: int = 1
    period: int = 8
    rate: float = 0.125


@dataclass
class EnksEmConfig:
    n_members: int = 50
    n_em_iters: int = 20
    n_m_steps: int = 500
    lr: float = 1e-2
    lr_final: float = 1e-4
    model_noise_var: float = 1e-3
    adaptive_model_noise: bool = True
    inflation: float = 1.0
    init_var: float = 4.0
    seed: int = 0


@dataclass
class VodenSettings:
    lam: float = 0.1
    n_e: int = 100
    n_m: int = 100
    epochs: int = 100
    lr: float = 3e-4
    lr_m: float = 1e-2
    seed: int = 0
    precondition: bool = True


@dataclass
class BinnConfig:
    n_steps: int = 10000
    lr: float = 1e-2
    lr_final: float = 1e-4
    seed: int = 0


@dataclass
class SrConfig:
    threshold: float = 0.1
    max_sweeps: int = 10
    window: int = 20


@dataclass
class AfConfig:
    k: int = 5


@dataclass
class EvaluationConfig:
    n_initials: int = 1000
    lyapunov_steps: int = 10000
    renorm_interval: int = 10
    d0: float = 1e-8
    attractor_steps: int = 10000


@dataclass
class ReproduceConfig:
    variances: list = field(default_factory=lambda: [0.5, 4.0, 16.0])
    full_variances: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    methods: list = field(default_factory=lambda: ["enks-em", "binn", "sr", "sr-hann", "af"])
    partial_scenarios: list = field(default_factory=lambda: ["s1", "s2"])
    jobs: int = 1


@dataclass
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    method: str = "enks-em"
    enks_em: EnksEmConfig = field(default_factory=EnksEmConfig)
    voden: VodenSettings = field(default_factory=VodenSettings)
    binn: BinnConfig = field(default_factory=BinnConfig)
    sr: SrConfig = field(default_factory=SrConfig)
    af: AfConfig = field(default_factory=AfConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    reproduce: ReproduceConfig = field(default_factory=ReproduceConfig)

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        return io.config_hash(self.to_dict())

    def with_seed(self, seed):
        """Override every seed: data, corruption and method seeds follow ``seed``."""
        d = self.to_dict()
        d["simulation"]["seed"] = seed
        d["simulation"]["holdout_seed"] = seed + 1
        d["corruption"]["seed"] = seed
        for name in ("enks_em", "voden", "binn"):
            d[name]["seed"] = seed
        return from_dict(d)

    def replace(self, **sections):
        """Copy with sections or top-level fields replaced; nested dicts are merged."""
        d = self.to_dict()
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(d.get(key), dict):
                d[key].update(value)
            else:
                d[key] = value
        return from_dict(d)


def _coerce(cls, value, path):
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(value) - set(known))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")
    kwargs = {}
    for name, f in known.items():
        if name not in value:
            continue
        v = value[name]
        where = f"{path}.{name}" if path else name
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _coerce(type(default), v, where)
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(where, f"expected true/false, got {v!r}")
            kwargs[name] = v
        elif isinstance(default, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(where, f"expected an integer, got {v!r}")
            kwargs[name] = v
        elif isinstance(default, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(where, f"expected a number, got {v!r}")
            kwargs[name] = float(v)
        elif isinstance(default, list):
            if not isinstance(v, list):
                raise ConfigError(where, f"expected a list, got {v!r}")
            kwargs[name] = list(v)
        else:
            kwargs[name] = v
    return cls(**kwargs)


def _validate(cfg):
    s = cfg.simulation
    if not s.dt > 0:
        raise ConfigError("simulation.dt", f"must be > 0, got {s.dt}")
    for name in ("T", "spinup", "holdout_T"):
        if getattr(s, name) < 0:
            raise ConfigError(f"simulation.{name}", "must be >= 0")
    if len(s.x0) != 3:
        raise ConfigError("simulation.x0", "must have 3 components")
    if cfg.system.name != "lorenz63":
        raise ConfigError("system.name", f"unknown system {cfg.system.name!r}")
    c = cfg.corruption
    if c.variance < 0:
        raise ConfigError("corruption.variance", "must be >= 0")
    if c.scenario not in SCENARIOS:
        raise ConfigError("corruption.scenario", f"must be one of {', '.join(SCENARIOS)}")
    if c.period < 1:
        raise ConfigError("corruption.period", "must be >= 1")
    if not 0 <= c.rate <= 1:
        raise ConfigError("corruption.rate", "must lie in [0, 1]")
    if cfg.method not in METHODS:
        raise ConfigError("method", f"unknown method {cfg.method!r}; expected one of {', '.join(METHODS)}")
    e = cfg.enks_em
    if e.n_members < 2:
        raise ConfigError("enks_em.n_members", "must be >= 2")
    if e.n_em_iters < 1 or e.n_m_steps < 1:
        raise ConfigError("enks_em.n_m_steps" if e.n_em_iters >= 1 else "enks_em.n_em_iters", "must be >= 1")
    if not (e.lr > 0 and e.lr_final > 0):
        raise ConfigError("enks_em.lr", "learning rates must be > 0")
    v = cfg.voden
    for name in ("n_e", "n_m", "epochs"):
        if getattr(v, name) < 1:
            raise ConfigError(f"voden.{name}", "must be >= 1")
    if v.lam < 0:
        raise ConfigError("voden.lam", "must be >= 0")
    if cfg.binn.n_steps < 1:
        raise ConfigError("binn.n_steps", "must be >= 1")
    if cfg.sr.window < 2:
        raise ConfigError("sr.window", "must be >= 2")
    if cfg.af.k < 1:
        raise ConfigError("af.k", "must be >= 1")
    ev = cfg.evaluation
    if ev.renorm_interval < 1 or ev.lyapunov_steps < ev.renorm_interval:
        raise ConfigError("evaluation.lyapunov_steps", "must be >= renorm_interval >= 1")
    if ev.n_initials < 1:
        raise ConfigError("evaluation.n_initials", "must be >= 1")
    return cfg


def from_dict(d):
    return _validate(_coerce(ExperimentConfig, d or {}, ""))


def load(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
    return from_dict(data)


def dump(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
