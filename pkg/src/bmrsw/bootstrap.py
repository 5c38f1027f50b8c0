"""Bootstrap uncertainty quantification for the minimum-divergence estimator.

Each replicate resamples the data with replacement, draws one noise bank
that stays fixed for the whole replicate, and minimises the SGA estimate of
the divergence over the parameter box with CMA-ES. Every seed is a pure
function of ``(master_seed, replicate index, purpose)``, so results do not
depend on the number of worker processes.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import cmaes
from .errors import ReplicateError, SizeError
from .measures import WeightedDiscreteMeasure
from .rsw import SgaConfig, sga_estimate
from .simulators import NoiseBank, SimulatorSpec, derive_seed, make_rng, simulate_batch

log = logging.getLogger(__name__)

MIN_SUCCESS_FRACTION = 0.9


@dataclass(frozen=True)
class BootstrapConfig:
    """Everything one bootstrap run needs besides data and simulator.

    ``cmaes.seed`` is ignored: each replicate derives its own optimizer seed.
    ``sga.lam`` is overridden by ``lam``.
    """

    lam: float
    cmaes: cmaes.CmaEsConfig
    replicates: int = 100
    sga: SgaConfig = field(default_factory=SgaConfig)
    master_seed: int = 0
    parallelism: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if self.sga.lam != self.lam:
            object.__setattr__(self, "sga", replace(self.sga, lam=float(self.lam)))

    def with_lambda(self, lam: float) -> "BootstrapConfig":
        return replace(self, lam=float(lam), sga=replace(self.sga, lam=float(lam)))


@dataclass
class ReplicateFit:
    theta: np.ndarray
    loss: float
    g_final: np.ndarray


@dataclass
class BootstrapResult:
    samples: np.ndarray
    losses: np.ndarray
    potentials: list
    seeds: list
    indices: list
    failures: list = field(default_factory=list)
    param_names: tuple = ()

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.param_names) or [f"theta{k}" for k in range(self.samples.shape[1])]
        w.writerow(["replicate"] + names + ["loss"])
        for idx, theta, loss in zip(self.indices, self.samples, self.losses):
            w.writerow([idx] + [repr(float(v)) for v in theta] + [repr(float(loss))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_json(self) -> dict:
        return {
            "param_names": list(self.param_names),
            "replicates": [
                {"index": i, "theta": [float(v) for v in t], "loss": float(l), "seeds": s,
                 "final_potential": [float(v) for v in g]}
                for i, t, l, s, g in zip(self.indices, self.samples, self.losses, self.seeds, self.potentials)
            ],
            "failures": self.failures,
        }


@dataclass
class BootstrapSummary:
    medians: np.ndarray
    intervals: np.ndarray
    alpha: float
    param_names: tuple = ()

    @property
    def widths(self) -> np.ndarray:
        return self.intervals[:, 1] - self.intervals[:, 0]

    def to_json(self) -> dict:
        names = list(self.param_names) or [f"theta{k}" for k in range(self.medians.size)]
        return {
            "alpha": self.alpha,
            "parameters": [
                {"name": nm, "median": float(m), "lower": float(lo), "upper": float(hi), "width": float(hi - lo)}
                for nm, m, (lo, hi) in zip(names, self.medians, self.intervals)
            ],
        }


def resample_dataset(data: WeightedDiscreteMeasure, seed) -> WeightedDiscreteMeasure:
    """Draw ``n`` atoms uniformly with replacement."""
    idx = make_rng(seed).integers(0, data.n, size=data.n)
    return WeightedDiscreteMeasure.uniform(data.atoms[idx])


def replicate_seeds(master_seed: int, index: int, prefix: str = "bootstrap") -> dict:
    """Integer seeds for each random stream of replicate ``index``."""
    return {tag: int(derive_seed(master_seed, index, f"{prefix}/{tag}").generate_state(1, np.uint64)[0])
            for tag in ("resample", "noise", "cmaes")}


def make_objective(data: WeightedDiscreteMeasure, spec: SimulatorSpec, bank: NoiseBank, sga: SgaConfig):
    def objective(theta):
        return sga_estimate(data, simulate_batch(spec, theta, bank), sga).estimate
    return objective


def fit_with_bank(data: WeightedDiscreteMeasure, spec: SimulatorSpec, config: BootstrapConfig,
                  bank: NoiseBank, cmaes_seed: int) -> ReplicateFit:
    objective = make_objective(data, spec, bank, config.sga)
    report = cmaes.minimize(objective, replace(config.cmaes, seed=cmaes_seed))
    final = sga_estimate(data, simulate_batch(spec, report.best_theta, bank), config.sga)
    return ReplicateFit(report.best_theta, final.estimate, final.final_potential)


def fit_one_replicate(data_resampled: WeightedDiscreteMeasure, spec: SimulatorSpec,
                      config: BootstrapConfig, replicate_seed) -> ReplicateFit:
    """Fit one (already resampled) dataset.

    ``replicate_seed`` is either an int, from which noise and optimizer
    seeds are derived, or a dict with ``"noise"`` and ``"cmaes"`` entries.
    The bank is reused for the concluding SGA run that yields ``g_final``.
    """
    seeds = replicate_seed if isinstance(replicate_seed, dict) else replicate_seeds(replicate_seed, 0)
    bank = NoiseBank.generate(seeds["noise"], config.sga.iterations, spec.noise_dim)
    return fit_with_bank(data_resampled, spec, config, bank, seeds["cmaes"])


def _run_replicate(args):
    data, spec, config, index = args
    seeds = replicate_seeds(config.master_seed, index)
    try:
        resampled = resample_dataset(data, seeds["resample"])
        fit = fit_one_replicate(resampled, spec, config, seeds)
        return index, seeds, fit, None
    except Exception as exc:  # recorded in the failure manifest
        log.exception("replicate %d failed", index)
        return index, seeds, None, f"{type(exc).__name__}: {exc}"


def map_tasks(fn, tasks, parallelism: int):
    """Ordered map, optionally over a process pool."""
    if parallelism <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(parallelism, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def run_bootstrap(data: WeightedDiscreteMeasure, spec: SimulatorSpec, config: BootstrapConfig) -> BootstrapResult:
    """Run ``config.replicates`` independent replicates.

    Returns the successful replicates plus a failure manifest when at least
    90% succeed; otherwise raises ``ReplicateError``.
    """
    tasks = [(data, spec, config, j) for j in range(config.replicates)]
    outcomes = sorted(map_tasks(_run_replicate, tasks, config.parallelism), key=lambda o: o[0])
    ok = [o for o in outcomes if o[2] is not None]
    failures = [{"index": i, "seeds": s, "error": err} for i, s, fit, err in outcomes if fit is None]
    if len(ok) < MIN_SUCCESS_FRACTION * config.replicates:
        first = failures[0] if failures else {"index": None, "error": "unknown"}
        raise ReplicateError(f"{len(failures)} of {config.replicates} replicates failed; "
                             f"first: replicate {first['index']}: {first['error']}", index=first["index"])
    return BootstrapResult(
        samples=np.array([fit.theta for _, _, fit, _ in ok]),
        losses=np.array([fit.loss for _, _, fit, _ in ok]),
        potentials=[fit.g_final for _, _, fit, _ in ok],
        seeds=[s for _, s, _, _ in ok],
        indices=[i for i, _, _, _ in ok],
        failures=failures,
        param_names=tuple(spec.param_names),
    )


def summarize(result, alpha: float = 0.05) -> BootstrapSummary:
    """Marginal medians and percentile intervals ``[alpha/2, 1 - alpha/2]``."""
    samples = result.samples if isinstance(result, BootstrapResult) else np.asarray(result, dtype=float)
    samples = samples.reshape(samples.shape[0], -1)
    if samples.shape[0] < 2:
        raise SizeError("summarize needs at least 2 bootstrap samples")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    medians = np.median(samples, axis=0)
    lo, hi = np.percentile(samples, [50 * alpha, 100 - 50 * alpha], axis=0, method="linear")
    names = result.param_names if isinstance(result, BootstrapResult) else ()
    return BootstrapSummary(medians, np.stack([lo, hi], axis=1), alpha, names)


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
