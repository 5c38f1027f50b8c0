"""Run configuration: one JSON document holding every tuning parameter.

Omitted fields take the standard defaults (M' = 15, M = 100, s = 20000,
B = 1, g0 = 0, R = 50, K = 16, sigma0 = 1). Parsing is strict: unknown
keys and ill-typed values raise :class:`ConfigError` naming the field, and
malformed JSON reports the line and column.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Union

from .errors import ConfigError

SCHEMA_VERSION = 1


@dataclass
class SimulatorBlock:
    name: str = "normal"
    lower: Optional[list] = None
    upper: Optional[list] = None
    theta0: Optional[list] = None


@dataclass
class ContaminationBlock:
    epsilon: float = 0.0
    rho: float = 0.0
    dirac: Optional[float] = None
    contaminant: Optional[str] = None
    contaminant_theta: Optional[list] = None


@dataclass
class DatasetBlock:
    source: str = "generate"
    path: Optional[str] = None
    simulator: Optional[str] = None
    theta_star: Optional[list] = None
    n: int = 1000
    contamination: ContaminationBlock = field(default_factory=ContaminationBlock)


@dataclass
class SgaBlock:
    iterations: int = 20000
    learning_rate_scale: float = 1.0
    burn_in_fraction: float = 0.6


@dataclass
class CmaEsBlock:
    population: int = 16
    rounds: int = 50
    sigma0: float = 1.0
    max_resamples: int = 10


@dataclass
class BootstrapBlock:
    replicates: int = 100
    alpha: float = 0.05


@dataclass
class SelectionBlock:
    m_prime: int = 15
    grid: Optional[list] = None
    min_gap: float = 0.1
    min_decrease: float = 0.2
    subsample: int = 2048
    no_elbow_lambda: float = 0.001


@dataclass
class MmdBlock:
    xs: Optional[str] = None
    ys: Optional[str] = None
    sigmas: list = field(default_factory=lambda: [10.0, 100.0, 1000.0])
    generate_n: int = 10000
    generate_shift: float = 2.0


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    simulator: SimulatorBlock = field(default_factory=SimulatorBlock)
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    # float or the string "auto"
    lam: Union[float, str] = 1.0
    sga: SgaBlock = field(default_factory=SgaBlock)
    cmaes: CmaEsBlock = field(default_factory=CmaEsBlock)
    bootstrap: BootstrapBlock = field(default_factory=BootstrapBlock)
    selection: SelectionBlock = field(default_factory=SelectionBlock)
    mmd: MmdBlock = field(default_factory=MmdBlock)
    master_seed: int = 0
    output_dir: str = "out"
    parallelism: Optional[int] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def validate(self) -> "RunConfig":
        _validate(self)
        return self


_NESTED = {
    (RunConfig, "simulator"): SimulatorBlock, (RunConfig, "dataset"): DatasetBlock,
    (RunConfig, "sga"): SgaBlock, (RunConfig, "cmaes"): CmaEsBlock, (RunConfig, "bootstrap"): BootstrapBlock,
    (RunConfig, "selection"): SelectionBlock, (RunConfig, "mmd"): MmdBlock,
    (DatasetBlock, "contamination"): ContaminationBlock,
}


def _build(cls, obj, path: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"field '{path}': expected an object, got {type(obj).__name__}")
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in obj.items():
        attr = "lam" if (cls is RunConfig and key == "lambda") else key
        if attr not in names:
            raise ConfigError(f"field '{path}{key}': unknown key")
        block = _NESTED.get((cls, key))
        if block is not None and isinstance(value, dict):
            value = _build(block, value, f"{path}{key}.")
        elif block is not None:
            raise ConfigError(f"field '{path}{key}': expected an object")
        kwargs[attr] = value
    return cls(**kwargs)


def _require(cond: bool, name: str, msg: str):
    if not cond:
        raise ConfigError(f"field '{name}': {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def _num_list(v, name: str, allow_none: bool = True):
    if v is None and allow_none:
        return
    _require(isinstance(v, list) and all(_is_num(x) for x in v), name, "expected a list of numbers")


def _validate(cfg: RunConfig):
    _require(cfg.schema_version == SCHEMA_VERSION, "schema_version",
             f"unsupported version {cfg.schema_version!r} (expected {SCHEMA_VERSION})")
    s = cfg.simulator
    _require(isinstance(s.name, str), "simulator.name", "expected a string")
    for nm in ("lower", "upper", "theta0"):
        _num_list(getattr(s, nm), f"simulator.{nm}")
    d = cfg.dataset
    _require(d.source in ("generate", "csv"), "dataset.source", "must be 'generate' or 'csv'")
    if d.source == "csv":
        _require(isinstance(d.path, str) and d.path != "", "dataset.path", "required when source is 'csv'")
    else:
        _require(_is_int(d.n) and d.n >= 1, "dataset.n", "must be a positive integer")
        _num_list(d.theta_star, "dataset.theta_star")
    c = d.contamination
    _require(_is_num(c.epsilon) and 0 <= c.epsilon <= 1, "dataset.contamination.epsilon", "must lie in [0, 1]")
    _require(_is_num(c.rho) and c.rho >= 0, "dataset.contamination.rho", "must be >= 0")
    _require(c.dirac is None or _is_num(c.dirac), "dataset.contamination.dirac", "expected a number or null")
    _num_list(c.contaminant_theta, "dataset.contamination.contaminant_theta")
    if isinstance(cfg.lam, str):
        _require(cfg.lam == "auto", "lambda", "must be a positive number or \"auto\"")
    else:
        _require(_is_num(cfg.lam) and cfg.lam > 0, "lambda", "must be a positive number or \"auto\"")
    _require(_is_int(cfg.sga.iterations) and cfg.sga.iterations >= 1, "sga.iterations", "must be a positive integer")
    _require(_is_num(cfg.sga.learning_rate_scale) and cfg.sga.learning_rate_scale > 0,
             "sga.learning_rate_scale", "must be > 0")
    _require(_is_num(cfg.sga.burn_in_fraction) and 0 <= cfg.sga.burn_in_fraction < 1,
             "sga.burn_in_fraction", "must lie in [0, 1)")
    _require(_is_int(cfg.cmaes.population) and cfg.cmaes.population >= 4, "cmaes.population", "must be an integer >= 4")
    _require(_is_int(cfg.cmaes.rounds) and cfg.cmaes.rounds >= 1, "cmaes.rounds", "must be a positive integer")
    _require(_is_num(cfg.cmaes.sigma0) and cfg.cmaes.sigma0 > 0, "cmaes.sigma0", "must be > 0")
    _require(_is_int(cfg.cmaes.max_resamples) and cfg.cmaes.max_resamples >= 0,
             "cmaes.max_resamples", "must be a non-negative integer")
    _require(_is_int(cfg.bootstrap.replicates) and cfg.bootstrap.replicates >= 1,
             "bootstrap.replicates", "must be a positive integer")
    _require(_is_num(cfg.bootstrap.alpha) and 0 < cfg.bootstrap.alpha < 1, "bootstrap.alpha", "must lie in (0, 1)")
    sel = cfg.selection
    _require(_is_int(sel.m_prime) and sel.m_prime >= 2, "selection.m_prime", "must be an integer >= 2")
    if sel.grid is not None:
        _num_list(sel.grid, "selection.grid", allow_none=False)
        _require(len(sel.grid) > 0, "selection.grid", "must not be empty")
        _require(all(v > 0 for v in sel.grid), "selection.grid", "values must be positive")
        _require(all(b > a for a, b in zip(sel.grid, sel.grid[1:])), "selection.grid", "must be strictly increasing")
    _require(_is_num(sel.no_elbow_lambda) and sel.no_elbow_lambda > 0, "selection.no_elbow_lambda", "must be > 0")
    _require(_is_int(sel.subsample) and sel.subsample >= 2, "selection.subsample", "must be an integer >= 2")
    _num_list(cfg.mmd.sigmas, "mmd.sigmas", allow_none=False)
    _require(_is_int(cfg.master_seed) and 0 <= cfg.master_seed < 2**64, "master_seed", "must be a 64-bit unsigned integer")
    _require(cfg.parallelism is None or (_is_int(cfg.parallelism) and cfg.parallelism >= 1),
             "parallelism", "must be a positive integer or null")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON configuration document."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        cfg = _build(RunConfig, obj, "")
    except TypeError as exc:  # pragma: no cover - guarded by _build
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return parse_config(fh.read())
