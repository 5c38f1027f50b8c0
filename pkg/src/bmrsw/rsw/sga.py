"""Semi-discrete lambda-RSW divergence via stochastic sub-gradient ascent.

The divergence between the empirical measure of data atoms ``Y_1..Y_n`` and
a model ``F`` is the supremum over potentials ``g`` of ``E_F h1(X, g)`` with

    h1(x, g) = min_j (|x - Y_j|^2 - g_j) - (1/lam) log(mean_t exp(-lam g_t)).

Maximising potentials give the optimal KL-reweighting of the data through a
softmax, see :func:`extract_reweighting`.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import StructuralError
from ..measures import WeightedDiscreteMeasure, log_sum_exp, softmax_weights
from ._kernel import sga_loop


@dataclass(frozen=True)
class SgaConfig:
    """Tuning of one SGA run.

    ``burn_in_fraction`` = 0.6 averages only the last 40% of iterations;
    set it to 0 to accumulate from the first iteration. ``g0`` of ``None``
    means the zero vector. ``seed`` is carried for callers that generate
    the sample stream; the ascent itself is deterministic.
    """

    iterations: int = 20000
    lam: float = 1.0
    learning_rate_scale: float = 1.0
    burn_in_fraction: float = 0.6
    g0: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if not self.learning_rate_scale > 0:
            raise ValueError("learning_rate_scale must be > 0")
        if not 0 <= self.burn_in_fraction < 1:
            raise ValueError("burn_in_fraction must lie in [0, 1)")
        if self.g0 is not None:
            object.__setattr__(self, "g0", tuple(float(v) for v in self.g0))

    def initial_potential(self, n: int) -> np.ndarray:
        if self.g0 is None:
            return np.zeros(n)
        if len(self.g0) != n:
            raise StructuralError(f"g0 has length {len(self.g0)}, data has {n} atoms")
        return np.array(self.g0, dtype=float)

    def burn_in_iterations(self, s: int) -> int:
        return int(math.floor(self.burn_in_fraction * s))


@dataclass
class SgaResult:
    estimate: float
    final_potential: np.ndarray
    trace: Optional[np.ndarray] = field(default=None, repr=False)
    burn_in: int = 0
    learning_rate_scale: float = 1.0

    def to_json(self) -> dict:
        return {"estimate": float(self.estimate),
                "final_potential": [float(v) for v in self.final_potential]}

    def trace_to_csv(self, path=None) -> str:
        """Columns: iteration, h1_value, running_estimate."""
        if self.trace is None:
            raise ValueError("run sga_estimate with keep_trace=True to get a trace")
        n = self.final_potential.size
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "h1_value", "running_estimate"])
        acc = tot = 0.0
        for i, h in enumerate(self.trace, start=1):
            if i > self.burn_in:
                rate = self.learning_rate_scale * math.sqrt(n / i)
                acc += rate * h
                tot += rate
            w.writerow([i, repr(float(h)), repr(float(acc / tot)) if tot > 0 else ""])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _check_uniform(data: WeightedDiscreteMeasure):
    if not data.is_uniform():
        raise StructuralError("h1 is defined against the unweighted empirical measure; data must be uniform")


def _point_and_potential(x, g, data):
    x = np.asarray(x, dtype=float).reshape(-1)
    g = np.asarray(g, dtype=float).reshape(-1)
    if x.size != data.dim:
        raise StructuralError(f"point has dimension {x.size}, data atoms have {data.dim}")
    if g.size != data.n:
        raise StructuralError(f"potential has length {g.size}, data has {data.n} atoms")
    return x, g


def _shifted_costs(x, g, data):
    diff = data.atoms - x
    return np.einsum("ij,ij->i", diff, diff) - g


def h1_eval(x, g, lam: float, data: WeightedDiscreteMeasure) -> float:
    _check_uniform(data)
    x, g = _point_and_potential(x, g, data)
    return float(_shifted_costs(x, g, data).min() - (log_sum_exp(-lam * g) - math.log(data.n)) / lam)


def h1_subgradient(x, g, lam: float, data: WeightedDiscreteMeasure) -> np.ndarray:
    """``softmax(g, lam) - e_{j*}`` with ``j*`` the lowest-index shifted nearest atom."""
    _check_uniform(data)
    x, g = _point_and_potential(x, g, data)
    jstar = int(np.argmin(_shifted_costs(x, g, data)))
    grad = softmax_weights(g, lam)
    grad[jstar] -= 1.0
    return grad


def sga_estimate(data: WeightedDiscreteMeasure, sample_stream, config: SgaConfig,
                 keep_trace: bool = False) -> SgaResult:
    """Run the ascent over ``config.iterations`` stream points.

    Step ``i`` uses rate ``B * sqrt(n / i)``. The returned estimate is the
    rate-weighted average of ``h1(X_i, g_{i-1})`` over the iterations after
    the burn-in; the final potential ``g_s`` is returned alongside.
    """
    _check_uniform(data)
    stream = np.asarray(sample_stream, dtype=float)
    if stream.ndim == 1:
        stream = stream[:, None] if data.dim == 1 else stream[None, :]
    if stream.shape[0] == 0:
        raise StructuralError("sample stream is empty")
    if stream.ndim != 2 or stream.shape[1] != data.dim:
        raise StructuralError(f"stream points have shape {stream.shape[1:]}, data atoms are {data.dim}-dimensional")
    s = int(config.iterations)
    if stream.shape[0] < s:
        raise StructuralError(f"stream has {stream.shape[0]} points, {s} iterations requested")
    stream = np.ascontiguousarray(stream[:s])
    burn = config.burn_in_iterations(s)
    estimate, g, trace = sga_loop(np.ascontiguousarray(data.atoms), stream, float(config.lam),
                                  float(config.learning_rate_scale), config.initial_potential(data.n),
                                  burn, keep_trace)
    return SgaResult(float(estimate), g, trace if keep_trace else None, burn, float(config.learning_rate_scale))


def extract_reweighting(g_final, lam: float, data: WeightedDiscreteMeasure) -> WeightedDiscreteMeasure:
    g_final = np.asarray(g_final, dtype=float).reshape(-1)
    if g_final.size != data.n:
        raise StructuralError(f"potential has length {g_final.size}, data has {data.n} atoms")
    return data.reweighted(softmax_weights(g_final, lam))
