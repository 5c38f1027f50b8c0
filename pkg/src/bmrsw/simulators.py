"""Simulator transforms, common-random-number noise banks and contamination.

A simulator is a deterministic map ``G(theta, z)`` applied to reference
noise ``z ~ N(0, I_z)``. Holding one :class:`NoiseBank` fixed across every
``theta`` makes the fitted objective a deterministic function of ``theta``.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import PreconditionError, StructuralError
from .measures import WeightedDiscreteMeasure

RNG_NAME = "numpy.PCG64"


def derive_seed(master_seed: int, index: int = 0, tag: str = "") -> np.random.SeedSequence:
    """Stable child seed for ``(master_seed, index, tag)``.

    Tags are hashed with CRC-32 so the mapping does not depend on Python's
    per-process string hashing.
    """
    return np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(index), zlib.crc32(tag.encode())])


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(int(seed) & (2**64 - 1)))


# -- transforms -------------------------------------------------------------

def gandk_transform(theta, z):
    """g-and-k quantile transform ``a + b (1 + 0.8 tanh(g z / 2)) z (1 + z^2)^k``."""
    a, b, g, k = (np.asarray(t, dtype=float) for t in theta)
    z = np.asarray(z, dtype=float)
    return a + b * (1.0 + 0.8 * np.tanh(g * z / 2.0)) * z * (1.0 + z * z) ** k


def normal_transform(theta, z):
    mu, sigma = theta
    return mu + sigma * np.asarray(z, dtype=float)


def student_t_sample(nu: float, rng: np.random.Generator, size=None):
    """Student-t draws built as ``Z / sqrt(V / nu)`` with ``V ~ chi2(nu)``."""
    if not nu > 0:
        raise ValueError("degrees of freedom must be positive")
    z = rng.standard_normal(size)
    v = rng.chisquare(nu, size)
    return z / np.sqrt(v / nu)


def discretize(x, rho: float):
    """Round down to the grid ``rho * Z`` (``floor(x / rho) * rho``)."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    return np.floor(np.asarray(x, dtype=float) / rho) * rho


# -- specs ------------------------------------------------------------------

@dataclass(frozen=True)
class SimulatorSpec:
    """A parametric simulator with box-bounded parameters.

    ``transform(theta, z)`` maps noise of shape ``(s, noise_dim)`` to points
    of shape ``(s, output_dim)``. Data-only models (no transform) provide a
    ``sampler(theta, rng, size)`` instead and cannot be fitted.
    """

    name: str
    param_dim: int
    param_lower: tuple
    param_upper: tuple
    noise_dim: int = 1
    output_dim: int = 1
    transform: Optional[Callable] = field(default=None, compare=False, repr=False)
    sampler: Optional[Callable] = field(default=None, compare=False, repr=False)
    param_names: tuple = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.param_lower)
        hi = tuple(float(v) for v in self.param_upper)
        if len(lo) != self.param_dim or len(hi) != self.param_dim:
            raise StructuralError("bounds must have length param_dim")
        if any(a >= b for a, b in zip(lo, hi)):
            raise StructuralError("lower bounds must be strictly below upper bounds")
        object.__setattr__(self, "param_lower", lo)
        object.__setattr__(self, "param_upper", hi)
        if self.transform is None and self.sampler is None:
            raise StructuralError("a simulator needs a transform or a sampler")

    def with_bounds(self, lower, upper) -> "SimulatorSpec":
        from dataclasses import replace
        return replace(self, param_lower=tuple(lower), param_upper=tuple(upper))

    def in_bounds(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.param_lower) and np.all(theta <= self.param_upper))

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.param_dim:
            raise StructuralError(f"{self.name} takes {self.param_dim} parameters, got {theta.size}")
        if not self.in_bounds(theta):
            raise PreconditionError(f"theta {theta.tolist()} outside bounds of {self.name}")
        return theta

    def apply(self, theta, noise) -> np.ndarray:
        if self.transform is None:
            raise PreconditionError(f"{self.name} has no transform; it can only generate data")
        noise = np.asarray(noise, dtype=float)
        out = self.transform(theta, noise[:, 0] if self.noise_dim == 1 else noise)
        out = np.asarray(out, dtype=float)
        return out.reshape(noise.shape[0], self.output_dim)

    def sample(self, theta, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.sampler is not None:
            out = np.asarray(self.sampler(theta, rng, size), dtype=float)
            return out.reshape(size, self.output_dim)
        return self.apply(theta, rng.standard_normal((size, self.noise_dim)))


def _t_sampler(theta, rng, size):
    return student_t_sample(float(theta[0]), rng, size)


GANDK = SimulatorSpec("gandk", 4, (-10.0, 0.1, 0.03, 0.05), (10.0, 10.0, 40.0, 3.0),
                      transform=gandk_transform, param_names=("a", "b", "g", "k"))
NORMAL = SimulatorSpec("normal", 2, (-10.0, 0.1), (10.0, 20.0),
                       transform=normal_transform, param_names=("mu", "sigma"))
STUDENT_T = SimulatorSpec("student_t", 1, (1e-9,), (1e12,), sampler=_t_sampler, param_names=("nu",))

BUILTIN = {spec.name: spec for spec in (GANDK, NORMAL, STUDENT_T)}
DEFAULT_THETA0 = {"gandk": (5.0, 0.15, 0.05, 0.05), "normal": (-5.0, 0.15)}


def get_simulator(name: str) -> SimulatorSpec:
    try:
        return BUILTIN[name]
    except KeyError:
        raise StructuralError(f"unknown simulator {name!r}; choose from {sorted(BUILTIN)}") from None


# -- noise banks ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseBank:
    """``s`` standard-normal reference draws of dimension ``noise_dim``."""

    seed: object
    draws: np.ndarray

    @classmethod
    def generate(cls, seed, size: int, noise_dim: int = 1) -> "NoiseBank":
        draws = make_rng(seed).standard_normal((int(size), int(noise_dim)))
        draws.setflags(write=False)
        return cls(seed, draws)

    def __len__(self):
        return self.draws.shape[0]


def simulate_batch(spec: SimulatorSpec, theta, bank: NoiseBank) -> np.ndarray:
    """Push every bank draw through ``spec``'s transform, in bank order."""
    theta = spec.check_theta(theta)
    return spec.apply(theta, bank.draws)


# -- contamination ----------------------------------------------------------

@dataclass(frozen=True)
class ContaminationSpec:
    """Mixture ``(1 - epsilon) T_rho # P_theta + epsilon F``.

    ``F`` is a point mass at ``dirac`` or a nested simulator with its own
    parameters. ``rho = 0`` disables the grid discretisation ``T_rho``.
    """

    epsilon: float = 0.0
    rho: float = 0.0
    dirac: Optional[Union[float, tuple]] = None
    contaminant: Optional[SimulatorSpec] = None
    contaminant_theta: Optional[tuple] = None

    def __post_init__(self):
        # epsilon = 1 (pure contaminant) is allowed as a degenerate test case
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.epsilon > 0 and self.dirac is None and self.contaminant is None:
            raise ValueError("epsilon > 0 needs a contaminant (dirac location or simulator)")

    def draw_contaminant(self, rng: np.random.Generator, size: int, dim: int) -> np.ndarray:
        if self.dirac is not None:
            loc = np.broadcast_to(np.asarray(self.dirac, dtype=float), (dim,))
            return np.tile(loc, (size, 1))
        return self.contaminant.sample(self.contaminant_theta, rng, size).reshape(size, dim)


def generate_dataset(clean: SimulatorSpec, theta_star, contamination: ContaminationSpec,
                     n: int, seed) -> WeightedDiscreteMeasure:
    """Draw ``n`` observations from the contaminated model.

    Each draw is a contaminant with probability ``epsilon`` (per-sample
    Bernoulli), otherwise a model draw, discretised when ``rho > 0``. Model
    noise and contamination use independent child streams of ``seed``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    eps = contamination.epsilon
    theta_star = np.asarray(theta_star, dtype=float)
    model_rng = make_rng(derive_seed(_seed_int(seed), 0, "model"))
    cont_rng = make_rng(derive_seed(_seed_int(seed), 0, "contamination"))
    points = clean.sample(theta_star, model_rng, n)
    if contamination.rho > 0:
        points = discretize(points, contamination.rho)
    mask = cont_rng.random(n) < eps
    k = int(mask.sum())
    if k:
        points = points.copy()
        points[mask] = contamination.draw_contaminant(cont_rng, k, points.shape[1])
    return WeightedDiscreteMeasure.uniform(points)


def _seed_int(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1, np.uint64)[0])
    return int(seed)
