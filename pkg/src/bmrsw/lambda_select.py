"""Data-driven choice of the robustness parameter lambda.

For each of ``M'`` bootstrap replicates and each lambda on a log-spaced
grid, the model is fitted and the W2 distance between the fitted model and
the reweighted data is recorded. Plotted against lambda, these diagnostics
typically fall sharply while outliers are being down-weighted and then
flatten; :func:`suggest_elbow` locates that bend.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bootstrap import (MIN_SUCCESS_FRACTION, BootstrapConfig, fit_with_bank, map_tasks,
                        replicate_seeds, resample_dataset)
from .errors import ReplicateError, SizeError
from .measures import WeightedDiscreteMeasure, w2sq_1d, w2sq_discrete
from .rsw import extract_reweighting
from .simulators import NoiseBank, SimulatorSpec, make_rng, simulate_batch

log = logging.getLogger(__name__)

SUBSAMPLE_CAP = 2048
ELBOW_MIN_GAP = 0.1
ELBOW_MIN_DECREASE = 0.2


@dataclass(frozen=True)
class LambdaGrid:
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("lambda grid is empty")
        if any(not v > 0 or not math.isfinite(v) for v in vals):
            raise ValueError("lambda values must be positive and finite")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("lambda grid must be strictly increasing")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


def default_grid() -> LambdaGrid:
    """Fifteen log-equidistant values ``10**(-2 + 4k/14)``, k = 0..14."""
    return LambdaGrid(tuple(10.0 ** (-2.0 + 4.0 * k / 14.0) for k in range(15)))


@dataclass
class LambdaDiagnostic:
    """Per-lambda diagnostic values; ``values[i, j]`` is lambda ``i``, replicate ``j``.

    Failed fits are stored as NaN and ignored by the summaries.
    """

    lambdas: np.ndarray
    values: np.ndarray
    suggestion: Optional[float] = None
    failures: list = field(default_factory=list)

    @property
    def medians(self) -> np.ndarray:
        return np.nanmedian(self.values, axis=1)

    @property
    def quartiles(self) -> np.ndarray:
        return np.nanpercentile(self.values, [25, 75], axis=1).T

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "replicate", "value"])
        for lam, row in zip(self.lambdas, self.values):
            for j, v in enumerate(row):
                w.writerow([repr(float(lam)), j, repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_json(self) -> dict:
        q = self.quartiles
        return {
            "suggestion": None if self.suggestion is None else float(self.suggestion),
            "summary": [
                {"lambda": float(lam), "median": float(med), "q1": float(lo), "q3": float(hi)}
                for lam, med, (lo, hi) in zip(self.lambdas, self.medians, q)
            ],
            "failures": self.failures,
        }


def diagnostic_value(theta_fit, g_final, lam: float, data: WeightedDiscreteMeasure,
                     spec: SimulatorSpec, bank: NoiseBank, subsample: int = SUBSAMPLE_CAP,
                     seed: int = 0) -> float:
    """W2 (not squared) between the fitted model sample and the reweighted data.

    One-dimensional problems are solved exactly on every point. Otherwise
    both sides are uniformly subsampled to at most ``subsample`` atoms
    (without replacement, reweighting by the original weights) first.
    """
    model = simulate_batch(spec, theta_fit, bank)
    reweighted = extract_reweighting(g_final, lam, data)
    fitted = WeightedDiscreteMeasure.uniform(model)
    if fitted.dim == 1:
        return math.sqrt(max(w2sq_1d(fitted, reweighted), 0.0))
    rng = make_rng(seed)
    fitted = _subsample(fitted, subsample, rng)
    reweighted = _subsample(reweighted, subsample, rng)
    return math.sqrt(max(w2sq_discrete(fitted, reweighted), 0.0))


def _subsample(mu: WeightedDiscreteMeasure, cap: int, rng) -> WeightedDiscreteMeasure:
    if mu.n <= cap:
        return mu
    idx = np.sort(rng.choice(mu.n, size=cap, replace=False))
    return WeightedDiscreteMeasure.normalized(mu.atoms[idx], mu.weights[idx])


def _selection_task(args):
    data, spec, config, j, lam, subsample = args
    seeds = replicate_seeds(config.master_seed, j, prefix="select")
    try:
        resampled = resample_dataset(data, seeds["resample"])
        bank = NoiseBank.generate(seeds["noise"], config.sga.iterations, spec.noise_dim)
        cfg = config.with_lambda(lam)
        fit = fit_with_bank(resampled, spec, cfg, bank, seeds["cmaes"])
        value = diagnostic_value(fit.theta, fit.g_final, lam, resampled, spec, bank,
                                 subsample=subsample, seed=seeds["resample"])
        return j, lam, value, None
    except Exception as exc:  # recorded in the failure manifest
        log.exception("selection fit (replicate %d, lambda %g) failed", j, lam)
        return j, lam, math.nan, f"{type(exc).__name__}: {exc}"


def run_selection(data: WeightedDiscreteMeasure, spec: SimulatorSpec, grid: LambdaGrid,
                  m_prime: int, base_config: BootstrapConfig,
                  subsample: int = SUBSAMPLE_CAP) -> LambdaDiagnostic:
    """Fit every (replicate, lambda) pair and attach an elbow suggestion.

    Replicate ``j`` uses one resample and one noise bank for every lambda,
    so differences along a row reflect lambda alone.
    """
    if m_prime < 2:
        raise ValueError("m_prime must be >= 2")
    lambdas = list(grid)
    tasks = [(data, spec, base_config, j, lam, subsample) for j in range(m_prime) for lam in lambdas]
    outcomes = map_tasks(_selection_task, tasks, base_config.parallelism)
    values = np.full((len(lambdas), m_prime), np.nan)
    failures = []
    for j, lam, value, err in outcomes:
        values[lambdas.index(lam), j] = value
        if err is not None:
            failures.append({"replicate": j, "lambda": lam, "error": err})
    if len(failures) > (1 - MIN_SUCCESS_FRACTION) * len(tasks):
        first = failures[0]
        raise ReplicateError(f"{len(failures)} of {len(tasks)} selection fits failed; first: "
                             f"replicate {first['replicate']}, lambda {first['lambda']}: {first['error']}",
                             index=first["replicate"])
    diag = LambdaDiagnostic(np.array(lambdas), values, failures=failures)
    if len(lambdas) >= 3:
        diag.suggestion = suggest_elbow(diag)
    return diag


def suggest_elbow(diag, lambdas=None, min_gap: float = ELBOW_MIN_GAP,
                  min_decrease: float = ELBOW_MIN_DECREASE) -> Optional[float]:
    """Chord-gap elbow on ``(log10 lambda, median)``; ``None`` means no elbow.

    Both axes are min-max normalised. The elbow is the point whose curve
    value lies furthest below the chord joining the first and last points.
    It is accepted only when that gap is at least ``min_gap`` and the median
    there is at least ``min_decrease`` (relative) below the first median.
    ``diag`` is a :class:`LambdaDiagnostic` or a sequence of medians, in
    which case ``lambdas`` must be given.
    """
    if isinstance(diag, LambdaDiagnostic):
        lambdas, medians = diag.lambdas, diag.medians
    else:
        medians = diag
    x = np.log10(np.asarray(lambdas, dtype=float))
    y = np.asarray(medians, dtype=float)
    if x.size != y.size:
        raise ValueError("lambdas and medians differ in length")
    if y.size < 3:
        raise SizeError("elbow detection needs at least 3 grid points")
    if not np.all(np.isfinite(y)):
        return None
    span = y.max() - y.min()
    if span <= 0:
        return None
    xn = (x - x[0]) / (x[-1] - x[0])
    yn = (y - y.min()) / span
    chord = yn[0] + (yn[-1] - yn[0]) * xn
    gap = chord - yn
    k = int(np.argmax(gap))
    if gap[k] < min_gap:
        return None
    if y[0] - y[k] < min_decrease * abs(y[0]):
        return None
    return float(lambdas[k])
