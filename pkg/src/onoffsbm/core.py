"""Shared model types: rate parameters, finite atomic measures on R^d x {active, dormant},
the built-in test-function family, and counter-based random streams.

Everything here is an immutable value after construction and safe to share across
Monte-Carlo workers. Random streams are keyed by (master_seed, stream_id) so that a
replicate's draw sequence never depends on how work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ACTIVE = 1
DORMANT = 0

_MASK64 = (1 << 64) - 1


class OnOffError(Exception):
    """Base class for errors raised by this package."""


class NonPositiveRate(OnOffError):
    """A rate parameter that must be strictly positive is not."""


class BadDimension(OnOffError):
    """Spatial dimension below 1, or mismatched with the data."""


class NonPositiveEpsilon(OnOffError):
    """Particle mass / rescaling parameter must be strictly positive."""


class MissingDerivative(OnOffError):
    """The test function does not provide the Laplacian an operation needs."""


@dataclass(frozen=True)
class ModelParams:
    """Rates of the on/off branching system.

    gamma   -- branching rate of an active particle (critical binary: split or
               die with probability 1/2 each)
    c       -- dormancy-initiation rate (active -> dormant)
    c_tilde -- resuscitation rate (dormant -> active)
    dim     -- spatial dimension of the motion
    """

    gamma: float
    c: float
    c_tilde: float
    dim: int = 1

    def __post_init__(self):
        validate_params(self)

    @property
    def rate_bound(self) -> float:
        """Common bound on the dual mechanism's coefficients: c + c_tilde + gamma."""
        return self.c + self.c_tilde + self.gamma


def validate_params(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged iff every rate/dimension invariant holds."""
    for name in ("gamma", "c", "c_tilde"):
        value = getattr(params, name)
        if not (value > 0.0) or not math.isfinite(value):
            raise NonPositiveRate(f"{name} must be a finite positive rate, got {value!r}")
    if int(params.dim) < 1 or params.dim != int(params.dim):
        raise BadDimension(f"dim must be an integer >= 1, got {params.dim!r}")
    return params


@dataclass(frozen=True)
class RandomSource:
    """Counter-based random stream.

    The same (master_seed, stream_id) pair reproduces an identical draw
    sequence regardless of worker scheduling. ``child(j)`` derives disjoint
    substreams (32-bit fan-out per level); replicate j of an ensemble owns
    ``base.child(j)`` exclusively.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = ((self.master_seed & _MASK64) << 64) | (self.stream_id & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RandomSource":
        if index < 0:
            raise ValueError("substream index must be nonnegative")
        return RandomSource(self.master_seed, ((self.stream_id << 32) ^ (index + 1)) & _MASK64)


def as_generator(rng: "RandomSource | np.random.Generator") -> np.random.Generator:
    if isinstance(rng, RandomSource):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomSource or numpy Generator, got {type(rng)!r}")


@dataclass(frozen=True)
class FiniteMeasure:
    """Finite atomic measure on R^dim x {active, dormant}.

    positions -- (n, dim) atom locations
    states    -- (n,) entries in {ACTIVE, DORMANT}
    weights   -- (n,) strictly positive masses
    """

    positions: np.ndarray
    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.size == 0:
            pos = pos.reshape(0, pos.shape[1] if pos.ndim == 2 and pos.shape[1] else 1)
        states = np.asarray(self.states, dtype=np.int8).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (len(pos) == len(states) == len(weights)):
            raise ValueError("positions, states, weights must have equal length")
        if np.any((states != ACTIVE) & (states != DORMANT)):
            raise ValueError("states must be 0 (dormant) or 1 (active)")
        if np.any(weights <= 0.0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be strictly positive and finite")
        for name, arr in (("positions", pos), ("states", states), ("weights", weights)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple], dim: int | None = None) -> "FiniteMeasure":
        """Build from (position, state, weight) triples; scalar positions mean dim=1."""
        atoms = list(atoms)
        if not atoms:
            return cls.zero(dim or 1)
        positions = []
        for position, _state, _weight in atoms:
            positions.append(np.atleast_1d(np.asarray(position, dtype=float)))
        pos = np.vstack(positions)
        if dim is not None and pos.shape[1] != dim:
            raise BadDimension(f"atom positions have dim {pos.shape[1]}, expected {dim}")
        return cls(pos, [a[1] for a in atoms], [a[2] for a in atoms])

    @classmethod
    def dirac(cls, position, state: int, weight: float = 1.0) -> "FiniteMeasure":
        return cls.from_atoms([(position, state, weight)])

    @classmethod
    def zero(cls, dim: int = 1) -> "FiniteMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int8), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def scaled(self, factor: float) -> "FiniteMeasure":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return FiniteMeasure(self.positions, self.states, self.weights * factor)

    def __add__(self, other: "FiniteMeasure") -> "FiniteMeasure":
        if self.n_atoms == 0:
            return other
        if other.n_atoms == 0:
            return self
        if self.dim != other.dim:
            raise BadDimension("cannot add measures of different dimension")
        return FiniteMeasure(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.states, other.states]),
            np.concatenate([self.weights, other.weights]),
        )


def poissonize(mu: FiniteMeasure, epsilon: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Sample the initial rescaled population: N ~ Poisson(<mu,1>/epsilon) particles,
    positions/states i.i.d. from the normalized measure, each carrying mass epsilon.

    Returns (positions (N, dim), states (N,)). The zero measure yields an empty
    population.
    """
    if not (epsilon > 0.0):
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon!r}")
    gen = as_generator(rng)
    total = mu.total_mass
    if total == 0.0:
        return np.zeros((0, mu.dim)), np.zeros(0, dtype=np.int8)
    n = int(gen.poisson(total / epsilon))
    if n == 0:
        return np.zeros((0, mu.dim)), np.zeros(0, dtype=np.int8)
    idx = gen.choice(mu.n_atoms, size=n, p=mu.weights / total)
    return mu.positions[idx].copy(), mu.states[idx].copy()


def pair_integral(measure, phi) -> float:
    """Integral of phi against an atomic measure: sum of weight * phi(position, state).

    Accepts anything exposing positions/states/weights, or an object with
    ``as_measure()`` (particle systems, snapshots). Empty measure -> 0.
    """
    if not hasattr(measure, "weights") and hasattr(measure, "as_measure"):
        measure = measure.as_measure()
    if len(measure.weights) == 0:
        return 0.0
    return float(np.dot(measure.weights, phi(measure.positions, measure.states)))


class TestFunction:
    """Bounded nonnegative test function on R^dim x {active, dormant}.

    Subclasses provide ``value(positions, states)`` (vectorized over (n, dim)
    position arrays) together with an analytically known ``sup_bound``.
    ``continuous`` marks functions the grid-based dual solvers accept;
    ``vanishes_at_infinity`` marks functions whose far field is exactly /
    effectively zero, which the solvers' boundary-leak guard relies on.
    """

    name = "test-function"
    dim: int
    continuous = True
    vanishes_at_infinity = True
    support_radius: float | None = None

    def value(self, positions: np.ndarray, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, positions, states):
        return self.value(positions, states)

    @property
    def sup_bound(self) -> float:
        raise NotImplementedError

    @property
    def has_laplacian(self) -> bool:
        return False

    def laplacian(self, positions: np.ndarray, states: np.ndarray) -> np.ndarray:
        raise MissingDerivative(f"{self.name} does not provide a Laplacian")

    def effective_radius(self, tol: float = 1e-16) -> float | None:
        """Radius beyond which the function is below tol (None = does not decay)."""
        return self.support_radius

    def state_profile(self, xs: np.ndarray, state: int) -> np.ndarray:
        """Evaluate on a 1-D grid of positions for a fixed state (dim must be 1)."""
        xs = np.asarray(xs, dtype=float)
        return self.value(xs[:, None], np.full(len(xs), state, dtype=np.int8))


def _check_amps(active_amp: float, dormant_amp: float) -> None:
    if active_amp < 0 or dormant_amp < 0:
        raise ValueError("test-function amplitudes must be nonnegative")


def _radii_sq(positions: np.ndarray, center: tuple, dim: int) -> np.ndarray:
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    if pos.shape[1] != dim:
        raise BadDimension(f"positions have dim {pos.shape[1]}, expected {dim}")
    delta = pos - np.asarray(center, dtype=float)
    return np.einsum("ij,ij->i", delta, delta)


def _amp_for(states: np.ndarray, active_amp: float, dormant_amp: float) -> np.ndarray:
    return np.where(np.asarray(states) == ACTIVE, active_amp, dormant_amp)


@dataclass(frozen=True)
class ConstantFunction(TestFunction):
    """phi(x, i) = active_value for active, dormant_value for dormant."""

    active_value: float
    dormant_value: float
    dim: int = 1

    name = "constant"
    vanishes_at_infinity = False

    def __post_init__(self):
        _check_amps(self.active_value, self.dormant_value)

    def value(self, positions, states):
        n = len(np.atleast_2d(np.asarray(positions)))
        return np.full(n, 0.0) + _amp_for(states, self.active_value, self.dormant_value)

    @property
    def sup_bound(self) -> float:
        return max(self.active_value, self.dormant_value)

    @property
    def has_laplacian(self) -> bool:
        return True

    def laplacian(self, positions, states):
        return np.zeros(len(np.atleast_2d(np.asarray(positions))))

    def effective_radius(self, tol: float = 1e-16):
        return None


@dataclass(frozen=True)
class GaussianBump(TestFunction):
    """phi(x, i) = amp_i * exp(-|x - center|^2 / (2 width^2))."""

    active_amp: float
    dormant_amp: float
    center: tuple = (0.0,)
    width: float = 1.0
    dim: int = 1

    name = "gaussian"

    def __post_init__(self):
        _check_amps(self.active_amp, self.dormant_amp)
        if self.width <= 0:
            raise ValueError("width must be positive")
        if len(self.center) != self.dim:
            raise BadDimension("center must have length dim")

    def value(self, positions, states):
        r2 = _radii_sq(positions, self.center, self.dim)
        return _amp_for(states, self.active_amp, self.dormant_amp) * np.exp(-r2 / (2.0 * self.width**2))

    @property
    def sup_bound(self) -> float:
        return max(self.active_amp, self.dormant_amp)

    @property
    def has_laplacian(self) -> bool:
        return True

    def laplacian(self, positions, states):
        w2 = self.width**2
        r2 = _radii_sq(positions, self.center, self.dim)
        base = _amp_for(states, self.active_amp, self.dormant_amp) * np.exp(-r2 / (2.0 * w2))
        return base * (r2 / w2**2 - self.dim / w2)

    def effective_radius(self, tol: float = 1e-16) -> float:
        amp = self.sup_bound
        if amp <= tol:
            return 0.0
        return self.width * math.sqrt(2.0 * math.log(amp / tol))


@dataclass(frozen=True)
class TentFunction(TestFunction):
    """Compact tent: phi(x, i) = amp_i * max(0, 1 - |x - center| / radius)."""

    active_amp: float
    dormant_amp: float
    center: tuple = (0.0,)
    radius: float = 1.0
    dim: int = 1

    name = "tent"

    def __post_init__(self):
        _check_amps(self.active_amp, self.dormant_amp)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if len(self.center) != self.dim:
            raise BadDimension("center must have length dim")
        object.__setattr__(self, "support_radius", self.radius)

    def value(self, positions, states):
        r = np.sqrt(_radii_sq(positions, self.center, self.dim))
        return _amp_for(states, self.active_amp, self.dormant_amp) * np.maximum(0.0, 1.0 - r / self.radius)

    @property
    def sup_bound(self) -> float:
        return max(self.active_amp, self.dormant_amp)


@dataclass(frozen=True)
class BallIndicator(TestFunction):
    """phi(x, i) = amp_i on the closed ball of given radius, 0 outside.

    Discontinuous: accepted by the Monte-Carlo estimators but rejected by the
    grid-based dual solvers.
    """

    active_amp: float
    dormant_amp: float
    center: tuple = (0.0,)
    radius: float = 1.0
    dim: int = 1

    name = "ball-indicator"
    continuous = False

    def __post_init__(self):
        _check_amps(self.active_amp, self.dormant_amp)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if len(self.center) != self.dim:
            raise BadDimension("center must have length dim")
        object.__setattr__(self, "support_radius", self.radius)

    def value(self, positions, states):
        r2 = _radii_sq(positions, self.center, self.dim)
        return _amp_for(states, self.active_amp, self.dormant_amp) * (r2 <= self.radius**2)

    @property
    def sup_bound(self) -> float:
        return max(self.active_amp, self.dormant_amp)
