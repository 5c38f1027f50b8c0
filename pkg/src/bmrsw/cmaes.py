"""Box-constrained (mu/mu_w, K)-CMA-ES.

Standard CMA-ES with log-rank recombination weights, cumulative step-size
adaptation and rank-one plus rank-mu covariance updates, started from
``C = I``. Bounds are enforced by resampling an infeasible candidate up to
``max_resamples`` times; a candidate still outside the box is evaluated at
its projection and ranked with an added quadratic penalty on its distance
to the box, measured in units of the step size.

Fitness values for a generation are gathered before any state update, so
the run is identical whether candidates are evaluated serially or by a
parallel evaluator.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import OptimizerError, StructuralError
from .simulators import make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CmaEsConfig:
    lower: tuple
    upper: tuple
    theta0: tuple
    population: int = 16
    rounds: int = 50
    sigma0: float = 1.0
    seed: int = 0
    max_resamples: int = 10

    def __post_init__(self):
        lo, hi, x0 = (np.asarray(v, dtype=float).reshape(-1) for v in (self.lower, self.upper, self.theta0))
        if not (lo.size == hi.size == x0.size):
            raise StructuralError("lower, upper and theta0 must have equal length")
        if np.any(lo >= hi):
            raise StructuralError("lower bounds must be below upper bounds")
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise StructuralError("theta0 lies outside the bounds")
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be > 0")
        for name, arr in (("lower", lo), ("upper", hi), ("theta0", x0)):
            object.__setattr__(self, name, tuple(float(v) for v in arr))

    @property
    def dim(self) -> int:
        return len(self.theta0)


@dataclass
class CmaEsReport:
    best_theta: np.ndarray
    best_value: float
    history: list = field(default_factory=list)
    nonfinite_evaluations: int = 0
    evaluations: int = 0

    def to_json(self) -> dict:
        return {
            "best_theta": [float(v) for v in self.best_theta],
            "best_value": float(self.best_value),
            "evaluations": self.evaluations,
            "nonfinite_evaluations": self.nonfinite_evaluations,
            "history": [
                {"round": h["round"], "best_value": h["best_value"], "sigma": h["sigma"],
                 "mean": [float(v) for v in h["mean"]]}
                for h in self.history
            ],
        }

    def history_csv(self) -> str:
        d = len(self.best_theta)
        lines = [",".join(["round", "best_value", "sigma"] + [f"mean{k}" for k in range(d)])]
        for h in self.history:
            lines.append(",".join([str(h["round"]), repr(h["best_value"]), repr(h["sigma"])]
                                  + [repr(float(v)) for v in h["mean"]]))
        return "\n".join(lines) + "\n"


class CmaEsState:
    """Search distribution ``N(mean, sigma^2 C)`` plus evolution paths."""

    def __init__(self, config: CmaEsConfig):
        d = config.dim
        self.config = config
        self.lower = np.array(config.lower)
        self.upper = np.array(config.upper)
        self.mean = np.array(config.theta0, dtype=float)
        self.sigma = float(config.sigma0)
        self.C = np.eye(d)
        self.B = np.eye(d)
        self.D = np.ones(d)
        self.pc = np.zeros(d)
        self.ps = np.zeros(d)
        self.generation = 0

        K = config.population
        mu = K // 2
        w = math.log(K / 2 + 0.5) - np.log(np.arange(1, mu + 1))
        self.weights = w / w.sum()
        self.mu = mu
        self.mueff = 1.0 / np.sum(self.weights ** 2)
        me = self.mueff
        self.cc = (4 + me / d) / (d + 4 + 2 * me / d)
        self.cs = (me + 2) / (d + me + 5)
        self.c1 = 2 / ((d + 1.3) ** 2 + me)
        self.cmu = min(1 - self.c1, 2 * (me - 2 + 1 / me) / ((d + 2) ** 2 + me))
        self.damps = 1 + 2 * max(0.0, math.sqrt((me - 1) / (d + 1)) - 1) + self.cs
        self.chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))

    @property
    def dim(self) -> int:
        return self.mean.size

    def _refresh_eigensystem(self):
        C = np.triu(self.C) + np.triu(self.C, 1).T
        try:
            vals, vecs = np.linalg.eigh(C)
            ok = np.all(np.isfinite(vals))
        except np.linalg.LinAlgError:
            ok = False
        if ok and vals.min() <= 0:
            vals = np.maximum(vals, 1e-20 * max(vals.max(), 1e-300))
            C = (vecs * vals) @ vecs.T
        if not ok or not np.all(np.isfinite(C)):
            log.warning("covariance repair failed at generation %d; resetting C to identity", self.generation)
            C, vals, vecs = np.eye(self.dim), np.ones(self.dim), np.eye(self.dim)
        self.C, self.B, self.D = C, vecs, np.sqrt(vals)

    def inverse_sqrt_C(self) -> np.ndarray:
        return (self.B / self.D) @ self.B.T


def sample_generation(state: CmaEsState, rng: np.random.Generator):
    """Draw one population; returns ``(raw, feasible, distance)``.

    ``raw`` are the Gaussian samples used for the update, ``feasible`` the
    in-box points to evaluate (equal to ``raw`` unless clipping was needed)
    and ``distance`` the Euclidean distance of ``raw`` to the box.
    """
    K = state.config.population
    raw = np.empty((K, state.dim))
    A = state.B * state.D
    for i in range(K):
        for _ in range(state.config.max_resamples + 1):
            x = state.mean + state.sigma * (A @ rng.standard_normal(state.dim))
            if np.all(x >= state.lower) and np.all(x <= state.upper):
                break
        raw[i] = x
    feasible = np.clip(raw, state.lower, state.upper)
    distance = np.linalg.norm(raw - feasible, axis=1)
    return raw, feasible, distance


def _serial(objective, points):
    return [objective(p) for p in points]


def _rank_fitness(values: np.ndarray, distance: np.ndarray, sigma: float) -> np.ndarray:
    ranked = values.copy()
    outside = distance > 0
    if np.any(outside):
        finite = values[np.isfinite(values)]
        if finite.size >= 2:
            q75, q25 = np.percentile(finite, [75, 25])
            spread = q75 - q25
        else:
            spread = 0.0
        scale = max(spread, 1e-12 * (1 + np.abs(finite).max() if finite.size else 1.0))
        ranked[outside] += scale * (distance[outside] / sigma) ** 2
    return ranked


def tell(state: CmaEsState, raw: np.ndarray, ranked_fitness: np.ndarray):
    """Update mean, paths, covariance and step size from one ranked population."""
    order = np.argsort(ranked_fitness, kind="stable")[: state.mu]
    old_mean = state.mean
    y = (raw[order] - old_mean) / state.sigma
    y_w = state.weights @ y
    state.mean = old_mean + state.sigma * y_w

    cs, cc, c1, cmu = state.cs, state.cc, state.c1, state.cmu
    state.ps = (1 - cs) * state.ps + math.sqrt(cs * (2 - cs) * state.mueff) * (state.inverse_sqrt_C() @ y_w)
    state.generation += 1
    ps_norm = np.linalg.norm(state.ps)
    hsig = ps_norm / math.sqrt(1 - (1 - cs) ** (2 * state.generation)) / state.chi_n < 1.4 + 2 / (state.dim + 1)
    state.pc = (1 - cc) * state.pc + hsig * math.sqrt(cc * (2 - cc) * state.mueff) * y_w

    rank_mu = (y.T * state.weights) @ y
    state.C = ((1 - c1 - cmu) * state.C
               + c1 * (np.outer(state.pc, state.pc) + (not hsig) * cc * (2 - cc) * state.C)
               + cmu * rank_mu)
    state.sigma *= math.exp((cs / state.damps) * (ps_norm / state.chi_n - 1))
    state._refresh_eigensystem()


def minimize(objective: Callable, config: CmaEsConfig,
             parallel_evaluator: Optional[Callable] = None) -> CmaEsReport:
    """Minimise ``objective`` over the box for ``config.rounds`` generations.

    ``parallel_evaluator(objective, points)`` may evaluate a generation
    concurrently; it must return fitnesses in the order of ``points``.
    Non-finite fitnesses rank last and are counted in the report; a
    generation with no finite fitness raises ``OptimizerError``.
    """
    evaluate = parallel_evaluator or _serial
    rng = make_rng(config.seed)
    state = CmaEsState(config)
    best_theta = np.array(config.theta0, dtype=float)
    best_value = math.inf
    report = CmaEsReport(best_theta, best_value)

    for r in range(config.rounds):
        raw, feasible, distance = sample_generation(state, rng)
        values = np.array(list(evaluate(objective, [p.copy() for p in feasible])), dtype=float)
        report.evaluations += values.size
        bad = ~np.isfinite(values)
        if bad.all():
            raise OptimizerError(f"every candidate in generation {r} returned a non-finite value")
        if bad.any():
            report.nonfinite_evaluations += int(bad.sum())
            values[bad] = math.inf
        i = int(np.argmin(values))
        if values[i] < report.best_value:
            report.best_value = float(values[i])
            report.best_theta = feasible[i].copy()
        tell(state, raw, _rank_fitness(values, distance, state.sigma))
        report.history.append({"round": r, "best_value": float(values[i]), "sigma": state.sigma,
                               "mean": state.mean.copy()})
    return report
