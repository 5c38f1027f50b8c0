"""Gaussian-kernel maximum mean discrepancy in one dimension.

The estimator is the V-statistic (diagonal terms included), so for point
masses it reproduces the population value exactly. Kernel values are
accumulated as ``k - 1 = expm1(-d^2 / 2 sigma^2)``; the constant parts
cancel in MMD^2, which keeps the very-large-bandwidth regime accurate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizeError

_CHUNK = 2048


@dataclass(frozen=True)
class MmdConfig:
    sigma0: float

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be > 0")


def _as_sample(xs) -> np.ndarray:
    x = np.asarray(xs, dtype=float).reshape(-1)
    if x.size == 0:
        raise SizeError("MMD needs non-empty samples")
    return x


def _mean_kernel_minus_one(x: np.ndarray, y: np.ndarray, sigma0: float) -> float:
    scale = -0.5 / (sigma0 * sigma0)
    total = 0.0
    for start in range(0, x.size, _CHUNK):
        d = x[start:start + _CHUNK, None] - y[None, :]
        total += float(np.sum(np.expm1(scale * d * d)))
    return total / (x.size * y.size)


def gaussian_mmd_sq(xs, ys, sigma0: float) -> float:
    """V-statistic MMD^2 with kernel ``exp(-(x - y)^2 / (2 sigma0^2))``.

    Exactly symmetric in its two samples: both are sorted and put in a
    canonical order before any summation.
    """
    MmdConfig(sigma0)
    x, y = np.sort(_as_sample(xs)), np.sort(_as_sample(ys))
    if (y.size, tuple(y)) < (x.size, tuple(x)):
        x, y = y, x
    kxx = _mean_kernel_minus_one(x, x, sigma0)
    kyy = _mean_kernel_minus_one(y, y, sigma0)
    kxy = _mean_kernel_minus_one(x, y, sigma0)
    return kxx + kyy - 2.0 * kxy


def median_heuristic(xs, ys=None) -> float:
    """Median of the pairwise distances ``|x_i - x_j|``, ``i < j``, of the pooled sample."""
    pooled = _as_sample(xs) if ys is None else np.concatenate([_as_sample(xs), _as_sample(ys)])
    if pooled.size < 2:
        raise SizeError("median heuristic needs at least two points")
    i, j = np.triu_indices(pooled.size, k=1)
    return float(np.median(np.abs(pooled[i] - pooled[j])))


def large_bandwidth_limit_check(xs, ys, sigmas) -> list:
    """Rows ``(sigma0, sigma0^2 * MMD^2, (mean(xs) - mean(ys))^2)``.

    As ``sigma0`` grows the middle column tends to the last one.
    """
    sig = [float(s) for s in sigmas]
    if len(sig) < 3:
        raise SizeError("need at least three bandwidths")
    if any(b <= a for a, b in zip(sig, sig[1:])):
        raise ValueError("bandwidths must be strictly increasing")
    x, y = _as_sample(xs), _as_sample(ys)
    target = float((x.mean() - y.mean()) ** 2)
    return [(s, s * s * gaussian_mmd_sq(x, y, s), target) for s in sig]
