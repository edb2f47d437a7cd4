"""Exact event-driven simulator of (rescaled) critical binary on/off branching
Brownian motion, plus Monte-Carlo estimators of its Laplace functionals, total
masses, and martingale residuals.

Between events, active particles move as independent Brownian motions and dormant
particles are frozen; Gaussian increments are sampled only at event and observation
times, which is distributionally exact, so every duality check downstream is free
of time-discretization error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ACTIVE,
    DORMANT,
    FiniteMeasure,
    MissingDerivative,
    ModelParams,
    NonPositiveEpsilon,
    OnOffError,
    RandomSource,
    as_generator,
    poissonize,
)
from .runner import run_chunked

DEFAULT_POPULATION_CAP = 1_000_000

EVENT_SPLIT = "branch-split"
EVENT_DEATH = "branch-death"
EVENT_TO_DORMANT = "to-dormant"
EVENT_TO_ACTIVE = "to-active"


class PopulationCapExceeded(OnOffError):
    """Particle count hit the configured hard cap; the run must be re-scaled."""


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    index: int


@dataclass(frozen=True)
class Snapshot:
    """State of the population at an observation time.

    Positions are stored only when the caller asked to keep particles; the
    count/mass fields are always available.
    """

    time: float
    n_active: int
    n_dormant: int
    particle_mass: float
    active_positions: np.ndarray | None = None
    dormant_positions: np.ndarray | None = None

    @property
    def active_mass(self) -> float:
        return self.particle_mass * self.n_active

    @property
    def dormant_mass(self) -> float:
        return self.particle_mass * self.n_dormant

    @property
    def total_mass(self) -> float:
        return self.active_mass + self.dormant_mass

    def as_measure(self) -> FiniteMeasure:
        if self.active_positions is None or self.dormant_positions is None:
            raise ValueError("snapshot was recorded without particle positions")
        n = self.n_active + self.n_dormant
        if n == 0:
            return FiniteMeasure.zero(1)
        positions = np.vstack([self.active_positions, self.dormant_positions])
        states = np.concatenate(
            [np.full(self.n_active, ACTIVE, dtype=np.int8), np.full(self.n_dormant, DORMANT, dtype=np.int8)]
        )
        return FiniteMeasure(positions, states, np.full(n, self.particle_mass))

    def pair_integral(self, phi) -> float:
        if self.active_positions is None or self.dormant_positions is None:
            raise ValueError("snapshot was recorded without particle positions")
        total = 0.0
        if self.n_active:
            total += float(phi(self.active_positions, np.full(self.n_active, ACTIVE, dtype=np.int8)).sum())
        if self.n_dormant:
            total += float(phi(self.dormant_positions, np.full(self.n_dormant, DORMANT, dtype=np.int8)).sum())
        return self.particle_mass * total


class ParticleSystem:
    """Time-stamped population of massed particles in R^dim x {active, dormant}.

    Storage is two dense position arrays (active, dormant) with swap-remove
    deletion; event selection is a two-level draw (class by aggregate rate,
    then uniform within the class) since all particles of a class carry the
    same rate. One system per replicate, single-threaded mutation.

    ``branching_enabled=False`` freezes the branching clock (pure
    motion/switching dynamics, used by diagnostic tests).
    """

    __slots__ = (
        "params",
        "epsilon",
        "time",
        "branching_enabled",
        "population_cap",
        "_act",
        "_dor",
        "_na",
        "_nd",
    )

    def __init__(
        self,
        params: ModelParams,
        epsilon: float,
        active_positions=None,
        dormant_positions=None,
        time: float = 0.0,
        branching_enabled: bool = True,
        population_cap: int = DEFAULT_POPULATION_CAP,
    ):
        if not (epsilon > 0.0):
            raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon!r}")
        self.params = params
        self.epsilon = float(epsilon)
        self.time = float(time)
        self.branching_enabled = bool(branching_enabled)
        self.population_cap = int(population_cap)
        d = params.dim

        def prep(arr):
            if arr is None:
                return np.zeros((0, d))
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1 and d == 1:
                arr = arr[:, None]
            arr = np.atleast_2d(arr)
            if arr.shape[0] and arr.shape[1] != d:
                raise ValueError(f"positions must have shape (n, {d})")
            return arr.reshape(-1, d)

        act = prep(active_positions)
        dor = prep(dormant_positions)
        self._na = len(act)
        self._nd = len(dor)
        if self._na + self._nd > self.population_cap:
            raise PopulationCapExceeded(f"initial population {self._na + self._nd} exceeds cap")
        self._act = np.empty((max(16, 2 * self._na), d))
        self._act[: self._na] = act
        self._dor = np.empty((max(16, 2 * self._nd), d))
        self._dor[: self._nd] = dor

    @classmethod
    def from_particles(cls, positions, states, epsilon, params, **kwargs) -> "ParticleSystem":
        positions = np.asarray(positions, dtype=float).reshape(-1, params.dim)
        states = np.asarray(states).reshape(-1)
        return cls(
            params,
            epsilon,
            active_positions=positions[states == ACTIVE],
            dormant_positions=positions[states == DORMANT],
            **kwargs,
        )

    @classmethod
    def from_poisson(cls, mu: FiniteMeasure, epsilon, params, rng, **kwargs) -> "ParticleSystem":
        positions, states = poissonize(mu, epsilon, rng)
        return cls.from_particles(positions, states, epsilon, params, **kwargs)

    @property
    def n_active(self) -> int:
        return self._na

    @property
    def n_dormant(self) -> int:
        return self._nd

    @property
    def n_particles(self) -> int:
        return self._na + self._nd

    def active_positions(self) -> np.ndarray:
        return self._act[: self._na].copy()

    def dormant_positions(self) -> np.ndarray:
        return self._dor[: self._nd].copy()

    def total_masses(self) -> tuple[float, float]:
        return self.epsilon * self._na, self.epsilon * self._nd

    def per_active_rate(self) -> float:
        branch = self.params.gamma / self.epsilon if self.branching_enabled else 0.0
        return branch + self.params.c

    def event_rate(self) -> float:
        return self._na * self.per_active_rate() + self._nd * self.params.c_tilde

    def as_measure(self) -> FiniteMeasure:
        if self.n_particles == 0:
            return FiniteMeasure.zero(self.params.dim)
        positions = np.vstack([self._act[: self._na], self._dor[: self._nd]])
        states = np.concatenate(
            [np.full(self._na, ACTIVE, dtype=np.int8), np.full(self._nd, DORMANT, dtype=np.int8)]
        )
        return FiniteMeasure(positions, states, np.full(self.n_particles, self.epsilon))

    def pair_integral(self, phi) -> float:
        total = 0.0
        if self._na:
            total += float(phi(self._act[: self._na], np.full(self._na, ACTIVE, dtype=np.int8)).sum())
        if self._nd:
            total += float(phi(self._dor[: self._nd], np.full(self._nd, DORMANT, dtype=np.int8)).sum())
        return self.epsilon * total

    def snapshot(self, keep_particles: bool = False) -> Snapshot:
        return Snapshot(
            time=self.time,
            n_active=self._na,
            n_dormant=self._nd,
            particle_mass=self.epsilon,
            active_positions=self.active_positions() if keep_particles else None,
            dormant_positions=self.dormant_positions() if keep_particles else None,
        )

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(
            self.params,
            self.epsilon,
            active_positions=self.active_positions(),
            dormant_positions=self.dormant_positions(),
            time=self.time,
            branching_enabled=self.branching_enabled,
            population_cap=self.population_cap,
        )

    # -- mutation primitives ------------------------------------------------

    def _push(self, which: str, row: np.ndarray) -> None:
        if which == "act":
            if self._na == len(self._act):
                grown = np.empty((2 * len(self._act), self._act.shape[1]))
                grown[: self._na] = self._act[: self._na]
                self._act = grown
            self._act[self._na] = row
            self._na += 1
        else:
            if self._nd == len(self._dor):
                grown = np.empty((2 * len(self._dor), self._dor.shape[1]))
                grown[: self._nd] = self._dor[: self._nd]
                self._dor = grown
            self._dor[self._nd] = row
            self._nd += 1

    def _pop_active(self, i: int) -> np.ndarray:
        row = self._act[i].copy()
        self._na -= 1
        self._act[i] = self._act[self._na]
        return row

    def _pop_dormant(self, i: int) -> np.ndarray:
        row = self._dor[i].copy()
        self._nd -= 1
        self._dor[i] = self._dor[self._nd]
        return row

    def _diffuse_active(self, dt: float, gen: np.random.Generator) -> None:
        if self._na and dt > 0.0:
            self._act[: self._na] += gen.standard_normal((self._na, self.params.dim)) * math.sqrt(dt)


def _apply_event(system: ParticleSystem, gen: np.random.Generator) -> EventRecord:
    """Pick the affected particle and event kind; time must already be advanced."""
    p = system.params
    per_active = system.per_active_rate()
    ra = system._na * per_active
    rd = system._nd * p.c_tilde
    if gen.random() * (ra + rd) < ra:
        i = int(gen.integers(system._na))
        if gen.random() * per_active < p.c:
            system._push("dor", system._pop_active(i))
            kind = EVENT_TO_DORMANT
        elif gen.random() < 0.5:
            system._pop_active(i)
            kind = EVENT_DEATH
        else:
            if system.n_particles + 1 > system.population_cap:
                raise PopulationCapExceeded(f"population cap {system.population_cap} hit at t={system.time}")
            system._push("act", system._act[i].copy())
            kind = EVENT_SPLIT
    else:
        i = int(gen.integers(system._nd))
        system._push("act", system._pop_dormant(i))
        kind = EVENT_TO_ACTIVE
    return EventRecord(system.time, kind, i)


def next_event(system: ParticleSystem, rng) -> EventRecord | None:
    """Advance the system to its next event and apply it.

    Samples the waiting time from Exponential(total rate), moves every active
    particle by a Gaussian increment of per-coordinate variance equal to the
    waiting time, then selects the event. Returns None for a system with zero
    total rate (empty system: absorbing, nothing happens).
    """
    gen = as_generator(rng)
    rate = system.event_rate()
    if rate <= 0.0:
        return None
    dt = gen.exponential(1.0 / rate)
    system._diffuse_active(dt, gen)
    system.time += dt
    return _apply_event(system, gen)


def _advance(system: ParticleSystem, t_target: float, gen: np.random.Generator, events: list | None = None) -> None:
    """Run events up to t_target, then diffuse over the residual time exactly.

    Exponential clocks are memoryless, so discarding an overshooting waiting
    time and redrawing after the observation is distributionally exact.
    """
    while True:
        rate = system.event_rate()
        if rate <= 0.0:
            system.time = t_target
            return
        dt = gen.exponential(1.0 / rate)
        if system.time + dt >= t_target:
            system._diffuse_active(t_target - system.time, gen)
            system.time = t_target
            return
        system._diffuse_active(dt, gen)
        system.time += dt
        record = _apply_event(system, gen)
        if events is not None:
            events.append(record)


def simulate_until(
    system: ParticleSystem,
    t_end: float,
    rng,
    observation_times=(),
    keep_particles: bool = False,
    events: list | None = None,
) -> list[Snapshot]:
    """Simulate to t_end, recording a snapshot at each observation time.

    No time discretization anywhere: events happen at their exact sampled
    times and observations interpose a pure-diffusion move over the residual.
    """
    gen = as_generator(rng)
    if t_end < system.time:
        raise ValueError("t_end must be >= current system time")
    obs = [float(t) for t in observation_times]
    if any(b < a for a, b in zip(obs, obs[1:])):
        raise ValueError("observation_times must be sorted")
    if obs and (obs[0] < system.time or obs[-1] > t_end):
        raise ValueError("observation_times must lie within [system.time, t_end]")
    snapshots = []
    for t_obs in obs:
        _advance(system, t_obs, gen, events)
        snapshots.append(system.snapshot(keep_particles))
    if system.time < t_end:
        _advance(system, t_end, gen, events)
    return snapshots


def total_masses(system: ParticleSystem) -> tuple[float, float]:
    """(active mass, dormant mass) = epsilon * (n_active, n_dormant)."""
    return system.total_masses()


# -- Monte-Carlo drivers ----------------------------------------------------


@dataclass(frozen=True)
class LaplaceEstimate:
    estimate: float
    stderr: float
    n_reps: int


def _laplace_chunk(params, mu, phi, t, epsilon, cap, source, start, count):
    out = np.empty(count)
    for j in range(count):
        gen = source.child(start + j).generator()
        positions, states = poissonize(mu, epsilon, gen)
        system = ParticleSystem.from_particles(positions, states, epsilon, params, population_cap=cap)
        _advance(system, t, gen)
        out[j] = math.exp(-system.pair_integral(phi))
    return out


def laplace_functional_mc(
    mu: FiniteMeasure,
    phi,
    t: float,
    epsilon: float,
    n_reps: int,
    rng: RandomSource,
    params: ModelParams,
    workers: int = 1,
    population_cap: int = DEFAULT_POPULATION_CAP,
) -> LaplaceEstimate:
    """Sample mean and standard error of exp(-<Z_t, phi>) over independent
    replicates, each started from poissonize(mu, epsilon)."""
    if n_reps < 2:
        raise ValueError("n_reps must be >= 2")
    parts = run_chunked(
        _laplace_chunk, (params, mu, phi, t, epsilon, population_cap, rng), n_reps, workers=workers, chunk=1024
    )
    w = np.concatenate(parts)
    return LaplaceEstimate(float(w.mean()), float(w.std(ddof=1) / math.sqrt(n_reps)), n_reps)


@dataclass
class MassEnsemble:
    """Per-replicate (active, dormant) masses at the observation times."""

    times: np.ndarray
    active: np.ndarray  # (n_reps, n_times)
    dormant: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.active + self.dormant

    def mean_total(self) -> tuple[np.ndarray, np.ndarray]:
        tot = self.total
        n = tot.shape[0]
        return tot.mean(axis=0), tot.std(axis=0, ddof=1) / math.sqrt(n)


def _mass_chunk(params, mu, epsilon, times, cap, source, start, count):
    act = np.empty((count, len(times)))
    dor = np.empty((count, len(times)))
    for j in range(count):
        gen = source.child(start + j).generator()
        positions, states = poissonize(mu, epsilon, gen)
        system = ParticleSystem.from_particles(positions, states, epsilon, params, population_cap=cap)
        snaps = simulate_until(system, times[-1], gen, observation_times=times)
        act[j] = [s.active_mass for s in snaps]
        dor[j] = [s.dormant_mass for s in snaps]
    return act, dor


def ensemble_total_masses(
    mu: FiniteMeasure,
    epsilon: float,
    params: ModelParams,
    times,
    n_reps: int,
    rng: RandomSource,
    workers: int = 1,
    population_cap: int = DEFAULT_POPULATION_CAP,
) -> MassEnsemble:
    times = np.asarray(sorted(float(t) for t in times))
    parts = run_chunked(
        _mass_chunk, (params, mu, epsilon, times, population_cap, rng), n_reps, workers=workers, chunk=1024
    )
    return MassEnsemble(
        times,
        np.vstack([p[0] for p in parts]),
        np.vstack([p[1] for p in parts]),
    )


# -- martingale residuals ---------------------------------------------------


@dataclass
class MartingaleSeries:
    """Residual M_t(phi) and its branching quadratic-variation predictor."""

    times: np.ndarray
    residual: np.ndarray
    qv_predictor: np.ndarray


def _cumtrapz(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
    return out


def switching_generator(phi, params: ModelParams):
    """The drift operator of the mass functional: on actives
    (1/2) Laplacian(phi(.,1)) + c (phi(.,0) - phi(.,1)), on dormants
    c_tilde (phi(.,1) - phi(.,0)). Requires phi's Laplacian."""
    if not phi.has_laplacian:
        raise MissingDerivative(f"{phi.name} has no Laplacian; cannot form the drift operator")

    def apply(positions: np.ndarray, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states)
        phi_active = phi(positions, np.full(len(states), ACTIVE, dtype=np.int8))
        phi_dormant = phi(positions, np.full(len(states), DORMANT, dtype=np.int8))
        lap_active = phi.laplacian(positions, np.full(len(states), ACTIVE, dtype=np.int8))
        on_active = 0.5 * lap_active + params.c * (phi_dormant - phi_active)
        on_dormant = params.c_tilde * (phi_active - phi_dormant)
        return np.where(states == ACTIVE, on_active, on_dormant)

    return apply


def martingale_residual(snapshots: list[Snapshot], phi, params: ModelParams) -> MartingaleSeries:
    """M_t(phi) = <Z_t,phi> - <Z_0,phi> - int_0^t <Z_s, drift phi> ds (trapezoid
    over the snapshot times) and the predictor gamma int_0^t <Z_s, 1_active phi^2> ds.

    Snapshots must carry particle positions.
    """
    drift = switching_generator(phi, params)
    times = np.array([s.time for s in snapshots])
    f = np.empty(len(snapshots))
    g = np.empty(len(snapshots))
    h = np.empty(len(snapshots))
    for k, snap in enumerate(snapshots):
        if snap.active_positions is None or snap.dormant_positions is None:
            raise ValueError("martingale residual needs snapshots with particle positions")
        f[k] = snap.pair_integral(phi)
        total_g = 0.0
        total_h = 0.0
        if snap.n_active:
            act_states = np.full(snap.n_active, ACTIVE, dtype=np.int8)
            total_g += float(drift(snap.active_positions, act_states).sum())
            total_h += float((phi(snap.active_positions, act_states) ** 2).sum())
        if snap.n_dormant:
            dor_states = np.full(snap.n_dormant, DORMANT, dtype=np.int8)
            total_g += float(drift(snap.dormant_positions, dor_states).sum())
        g[k] = snap.particle_mass * total_g
        h[k] = params.gamma * snap.particle_mass * total_h
    residual = f - f[0] - _cumtrapz(g, times)
    return MartingaleSeries(times, residual, _cumtrapz(h, times))


def _martingale_chunk(params, mu, phi, epsilon, times, cap, source, start, count):
    m = np.empty(count)
    qv = np.empty(count)
    for j in range(count):
        gen = source.child(start + j).generator()
        positions, states = poissonize(mu, epsilon, gen)
        system = ParticleSystem.from_particles(positions, states, epsilon, params, population_cap=cap)
        snaps = simulate_until(system, times[-1], gen, observation_times=times, keep_particles=True)
        series = martingale_residual(snaps, phi, params)
        m[j] = series.residual[-1]
        qv[j] = series.qv_predictor[-1]
    return m, qv


def martingale_ensemble(
    mu: FiniteMeasure,
    phi,
    epsilon: float,
    params: ModelParams,
    times,
    n_reps: int,
    rng: RandomSource,
    workers: int = 1,
    population_cap: int = DEFAULT_POPULATION_CAP,
) -> tuple[np.ndarray, np.ndarray]:
    """Terminal residual and QV predictor per replicate: arrays (n_reps,)."""
    times = np.asarray(sorted(float(t) for t in times))
    if times[0] != 0.0:
        times = np.concatenate([[0.0], times])
    parts = run_chunked(
        _martingale_chunk, (params, mu, phi, epsilon, times, population_cap, rng), n_reps, workers=workers, chunk=512
    )
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
