"""Discrete measures and exact transport / information primitives.

Dual potentials are plain 1-D float arrays of length ``n`` (one entry per
data atom); no wrapper type is needed for them.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AbsoluteContinuityError, DimensionError, SizeError, StructuralError

DEFAULT_ATOM_CAP = 4096
_WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class WeightedDiscreteMeasure:
    """Finitely supported probability measure ``sum_j w_j delta_{x_j}`` on R^m.

    ``atoms`` has shape ``(N, m)``; ``weights`` has shape ``(N,)``. Duplicate
    atoms are kept as distinct atoms (bootstrap resamples rely on this).
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] == 0 or atoms.shape[1] == 0:
            raise StructuralError(f"atoms must be a non-empty (N, m) array, got shape {atoms.shape}")
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != atoms.shape[0]:
            raise StructuralError(f"{atoms.shape[0]} atoms but {weights.shape[0]} weights")
        if not np.all(np.isfinite(atoms)) or not np.all(np.isfinite(weights)):
            raise StructuralError("atoms and weights must be finite")
        if np.any(weights < 0):
            raise StructuralError("weights must be non-negative")
        if abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise StructuralError(f"weights sum to {weights.sum()!r}, expected 1")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, atoms) -> "WeightedDiscreteMeasure":
        atoms = np.asarray(atoms, dtype=float)
        n = atoms.shape[0] if atoms.ndim else 0
        return cls(atoms, np.full(n, 1.0 / max(n, 1)))

    @classmethod
    def normalized(cls, atoms, weights) -> "WeightedDiscreteMeasure":
        """Build from non-negative weights of arbitrary total mass."""
        w = np.asarray(weights, dtype=float)
        return cls(atoms, w / w.sum())

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.n) <= _WEIGHT_TOL))

    def reweighted(self, weights) -> "WeightedDiscreteMeasure":
        return WeightedDiscreteMeasure(self.atoms, weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    # -- serialization -------------------------------------------------
    def to_json(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj) -> "WeightedDiscreteMeasure":
        if isinstance(obj, (str, bytes)):
            obj = json.loads(obj)
        try:
            return cls(obj["atoms"], obj["weights"])
        except KeyError as exc:
            raise StructuralError(f"measure JSON is missing key {exc}") from None

    def to_csv(self, path=None) -> str:
        """One atom per row, coordinates then weight (last column).

        Floats are written with ``repr`` so that a round trip is lossless.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{k}" for k in range(self.dim)] + ["weight"])
        for x, w in zip(self.atoms, self.weights):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(w))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "WeightedDiscreteMeasure":
        """Read the CSV format written by :meth:`to_csv`.

        ``source`` is a path or the CSV text itself. A header row is optional.
        """
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and os.path.exists(source)):
            text = Path(source).read_text()
        else:
            text = str(source)
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows:
            try:
                float(rows[0][0])
            except ValueError:
                rows = rows[1:]
        if not rows:
            raise StructuralError("CSV contains no atoms")
        if len({len(r) for r in rows}) != 1 or len(rows[0]) < 2:
            raise StructuralError("every CSV row needs the same number (>= 2) of columns")
        table = np.array(rows, dtype=float)
        weights = table[:, -1]
        total = weights.sum()
        if abs(total - 1.0) > 1e-9:
            raise StructuralError(f"CSV weights sum to {total!r}")
        return cls(table[:, :-1], weights / total)


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def kl_discrete(q: WeightedDiscreteMeasure, p: WeightedDiscreteMeasure) -> float:
    """KL(q || p) for two measures sharing one atom list (0 log 0 = 0)."""
    if q.atoms.shape != p.atoms.shape or not np.array_equal(q.atoms, p.atoms):
        raise StructuralError("kl_discrete needs identical atom lists")
    support = q.weights > 0
    if np.any(p.weights[support] <= 0):
        raise AbsoluteContinuityError("q is not absolutely continuous with respect to p")
    qs, ps = q.weights[support], p.weights[support]
    return max(float(np.sum(qs * np.log(qs / ps))), 0.0)


def _quantile_table(atoms: np.ndarray, weights: np.ndarray):
    order = np.argsort(atoms, kind="stable")
    cum = np.cumsum(weights[order])
    return atoms[order], cum / cum[-1]


def w2sq_1d(a: WeightedDiscreteMeasure, b: WeightedDiscreteMeasure) -> float:
    """Exact squared W2 on the line through the monotone (quantile) coupling."""
    if a.dim != 1 or b.dim != 1:
        raise DimensionError(f"w2sq_1d needs m = 1, got {a.dim} and {b.dim}")
    xa, ca = _quantile_table(a.atoms[:, 0], a.weights)
    xb, cb = _quantile_table(b.atoms[:, 0], b.weights)
    knots = np.union1d(ca, cb)
    knots = np.concatenate(([0.0], knots[knots < 1.0], [1.0]))
    lengths = np.diff(knots)
    mids = knots[:-1] + 0.5 * lengths
    ia = np.minimum(np.searchsorted(ca, mids, side="right"), xa.size - 1)
    ib = np.minimum(np.searchsorted(cb, mids, side="right"), xb.size - 1)
    return float(np.sum(lengths * (xa[ia] - xb[ib]) ** 2))


def sq_dist_matrix(x, y) -> np.ndarray:
    x, y = _as_points(x), _as_points(y)
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def w2sq_discrete(a: WeightedDiscreteMeasure, b: WeightedDiscreteMeasure,
                  atom_cap: int = DEFAULT_ATOM_CAP) -> float:
    """Exact squared W2 between discrete measures in any dimension.

    Solved as a transportation LP with a network-simplex solver. Raises
    ``SizeError`` above ``atom_cap`` combined atoms; subsample first.
    """
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.n + b.n > atom_cap:
        raise SizeError(
            f"{a.n + b.n} combined atoms exceed the exact-solver cap of {atom_cap}; "
            "subsample both measures before calling w2sq_discrete")
    if a.n == 1 or b.n == 1:
        cost = sq_dist_matrix(a.atoms, b.atoms)
        return float(np.sum(cost * np.outer(a.weights, b.weights)))
    for key in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{key}", "1")
    import ot

    cost = sq_dist_matrix(a.atoms, b.atoms)
    wa = np.ascontiguousarray(a.weights / a.weights.sum())
    wb = np.ascontiguousarray(b.weights / b.weights.sum())
    value = ot.emd2(wa, wb, cost, numItermax=50_000_000)
    return max(float(value), 0.0)


def w2sq(a: WeightedDiscreteMeasure, b: WeightedDiscreteMeasure, atom_cap: int = DEFAULT_ATOM_CAP) -> float:
    """Dispatch to the 1-D fast path when possible."""
    if a.dim == 1 and b.dim == 1:
        return w2sq_1d(a, b)
    return w2sq_discrete(a, b, atom_cap=atom_cap)


def log_sum_exp(v) -> float:
    """``log(sum(exp(v)))`` via the max-shift identity."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0:
        raise StructuralError("log_sum_exp of an empty vector")
    top = v.max()
    return float(top + np.log(np.sum(np.exp(v - top))))


def softmax_weights(g, lam: float) -> np.ndarray:
    """Weights ``exp(-lam g_j) / sum_t exp(-lam g_t)``, computed stably."""
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("potential must be finite")
    e = np.exp(-lam * (g - g.min()))
    return e / e.sum()
