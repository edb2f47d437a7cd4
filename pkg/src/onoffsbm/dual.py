"""Deterministic dual solvers.

Three dual objects share one reaction/switching mechanism:

  * total-mass dual ODE   u' = -(gamma/2) u^2 + c (v - u),  v' = c_tilde (u - v);
  * spatial dual system   dV1/dt = (1/2) V1'' - (gamma/2) V1^2 + c (V0 - V1),
                          dV0/dt = c_tilde (V1 - V0),
    solved by method of lines (centered second difference on the active field,
    SSP-RK3 in time, homogeneous Neumann boundaries) for three initial-data
    variants: the measure-valued limit's dual (data phi), the fixed-mass-scale
    dual (data (1 - exp(-eps phi))/eps), and the particle-system dual in
    multiplicative coordinates (data exp(-phi), integrated via w = 1 - u which
    satisfies the same system);
  * the epsilon cascade comparing the fixed-scale duals with their limit.

Grids are 1-D and truncated where the data vanishes, with a margin of
4 sqrt(T); a boundary-leak guard turns truncation error into a typed error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BadDimension, FiniteMeasure, ModelParams, NonPositiveEpsilon, OnOffError, ACTIVE, DORMANT

VARIANT_SBM = "sbm-dual"
VARIANT_EPS = "eps-dual"
VARIANT_BBM = "bbm-dual"

CFL_NUMBER = 0.4


class OutOfBall(OnOffError):
    """A field left the sup-norm ball on which the Lipschitz certificate holds."""


class NonConvergent(OnOffError):
    """Step-halving hit its floor without meeting the tolerance."""


class CFLViolation(OnOffError):
    """Requested time step exceeds the stability bound dt <= 0.4 dx^2."""


class BoundaryLeak(OnOffError):
    """Field mass reached the truncated boundary beyond tolerance."""


# -- mechanism ----------------------------------------------------------------


@dataclass(frozen=True)
class BranchingMechanism:
    """Reaction + switching coefficients of the dual systems.

    psi(z)(x, active)  = linear_active  z1 + quad_active z1^2 - switch_to_dormant z0
    psi(z)(x, dormant) = linear_dormant z0 + quad_dormant z0^2 - switch_to_active z1

    rate_bound is a common bound on all coefficients; lipschitz_bound(A) is the
    Lipschitz constant of psi on the sup-norm ball of radius A (the square map
    contributes 2A).
    """

    linear_active: float
    linear_dormant: float
    quad_active: float
    quad_dormant: float
    switch_to_dormant: float
    switch_to_active: float
    rate_bound: float

    @classmethod
    def from_params(cls, params: ModelParams) -> "BranchingMechanism":
        return cls(
            linear_active=params.c,
            linear_dormant=params.c_tilde,
            quad_active=0.5 * params.gamma,
            quad_dormant=0.0,
            switch_to_dormant=params.c,
            switch_to_active=params.c_tilde,
            rate_bound=params.rate_bound,
        )

    def lipschitz_bound(self, ball_radius: float) -> float:
        return self.rate_bound * (2.0 + 2.0 * ball_radius)

    def apply(self, z_active: np.ndarray, z_dormant: np.ndarray):
        psi_active = (
            self.linear_active * z_active
            + self.quad_active * z_active**2
            - self.switch_to_dormant * z_dormant
        )
        psi_dormant = (
            self.linear_dormant * z_dormant
            + self.quad_dormant * z_dormant**2
            - self.switch_to_active * z_active
        )
        return psi_active, psi_dormant


def psi_eval(mech: BranchingMechanism, z_active, z_dormant, ball_radius: float | None = None):
    """Evaluate the mechanism on a field pair, optionally certifying the inputs
    stay inside the declared sup-norm ball."""
    z_active = np.asarray(z_active, dtype=float)
    z_dormant = np.asarray(z_dormant, dtype=float)
    if ball_radius is not None:
        sup = max(np.max(np.abs(z_active), initial=0.0), np.max(np.abs(z_dormant), initial=0.0))
        if sup > ball_radius * (1.0 + 1e-12):
            raise OutOfBall(f"field sup {sup} exceeds ball radius {ball_radius}")
    return mech.apply(z_active, z_dormant)


# -- total-mass dual ODE -------------------------------------------------------


@dataclass
class TotalMassDual:
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    dt: float
    halvings: int

    @property
    def final(self) -> tuple[float, float]:
        return float(self.u[-1]), float(self.v[-1])

    def at(self, t: float) -> tuple[float, float]:
        return float(np.interp(t, self.times, self.u)), float(np.interp(t, self.times, self.v))


def _rk4_total_mass(gamma, c, c_tilde, theta1, theta2, t_end, n_steps):
    def rhs(u, v):
        return -0.5 * gamma * u * u + c * (v - u), c_tilde * (u - v)

    h = t_end / n_steps
    us = np.empty(n_steps + 1)
    vs = np.empty(n_steps + 1)
    us[0], vs[0] = theta1, theta2
    u, v = theta1, theta2
    for k in range(n_steps):
        k1u, k1v = rhs(u, v)
        k2u, k2v = rhs(u + 0.5 * h * k1u, v + 0.5 * h * k1v)
        k3u, k3v = rhs(u + 0.5 * h * k2u, v + 0.5 * h * k2v)
        k4u, k4v = rhs(u + h * k3u, v + h * k3v)
        u += (h / 6.0) * (k1u + 2 * k2u + 2 * k3u + k4u)
        v += (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        us[k + 1], vs[k + 1] = u, v
    return us, vs


def _solve_total_mass_raw(gamma, c, c_tilde, theta1, theta2, t_end, dt=1e-2, tol=1e-8, dt_min=1e-7):
    if theta1 < 0 or theta2 < 0:
        raise ValueError("initial values must be nonnegative")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if t_end == 0:
        return TotalMassDual(np.array([0.0]), np.array([theta1]), np.array([theta2]), dt, 0)
    n_steps = max(1, int(math.ceil(t_end / dt)))
    us, vs = _rk4_total_mass(gamma, c, c_tilde, theta1, theta2, t_end, n_steps)
    halvings = 0
    while True:
        us2, vs2 = _rk4_total_mass(gamma, c, c_tilde, theta1, theta2, t_end, 2 * n_steps)
        gap = max(np.max(np.abs(us2[::2] - us)), np.max(np.abs(vs2[::2] - vs)))
        if gap < tol:
            times = np.linspace(0.0, t_end, 2 * n_steps + 1)
            return TotalMassDual(times, us2, vs2, t_end / (2 * n_steps), halvings)
        us, vs = us2, vs2
        n_steps *= 2
        halvings += 1
        if t_end / n_steps < dt_min:
            raise NonConvergent(f"step-halving reached dt={t_end / n_steps} without gap < {tol}")


def solve_total_mass_dual(
    params: ModelParams, theta1: float, theta2: float, t_end: float, dt: float = 1e-2, tol: float = 1e-8
) -> TotalMassDual:
    """Classical RK4 with step-halving until successive sup-differences < tol.

    The solution pair stays in [0, max(theta1, theta2)]: the system is
    cooperative with nonpositive nonlinearity.
    """
    sol = _solve_total_mass_raw(params.gamma, params.c, params.c_tilde, theta1, theta2, t_end, dt, tol)
    cap = max(theta1, theta2) * (1.0 + 1e-10) + 1e-14
    if np.any(sol.u < -1e-12) or np.any(sol.v < -1e-12) or np.any(sol.u > cap) or np.any(sol.v > cap):
        raise NonConvergent("total-mass dual left the invariant box [0, max(theta1, theta2)]")
    return sol


# -- spatial grid and fields ----------------------------------------------------


@dataclass(frozen=True)
class DualGrid:
    """Uniform 1-D lattice x_j = x_min + j dx, j = 0..n_nodes-1."""

    x_min: float
    dx: float
    n_nodes: int

    def __post_init__(self):
        if self.dx <= 0 or self.n_nodes < 3:
            raise ValueError("need dx > 0 and at least 3 nodes")

    @property
    def x_max(self) -> float:
        return self.x_min + self.dx * (self.n_nodes - 1)

    @property
    def xs(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_nodes)

    def refined(self) -> "DualGrid":
        return DualGrid(self.x_min, 0.5 * self.dx, 2 * self.n_nodes - 1)


def grid_for(phi, t_end: float, dx: float = 0.02, margin_factor: float = 4.0) -> DualGrid:
    """Grid wide enough that phi's support sits margin_factor*sqrt(t_end) away
    from each boundary (heat-kernel tails beyond that are negligible)."""
    if phi.dim != 1:
        raise BadDimension("spatial dual solvers support dim = 1 only")
    center = float(getattr(phi, "center", (0.0,))[0]) if hasattr(phi, "center") else 0.0
    radius = phi.effective_radius(1e-16 * max(phi.sup_bound, 1e-300)) if phi.vanishes_at_infinity else None
    if radius is None:
        half = 1.0  # x-independent data: any modest window works
    else:
        half = radius + margin_factor * math.sqrt(max(t_end, 0.0)) + dx
    n = 2 * int(math.ceil(half / dx)) + 1
    return DualGrid(center - dx * (n - 1) / 2.0, dx, n)


@dataclass
class DualField:
    """Pair of spatial profiles (active, dormant) on a grid at one time."""

    grid: DualGrid
    active: np.ndarray
    dormant: np.ndarray
    time: float

    def sup(self) -> float:
        return max(float(np.max(np.abs(self.active))), float(np.max(np.abs(self.dormant))))

    def check(self, upper: float | None = None) -> None:
        if not (np.all(np.isfinite(self.active)) and np.all(np.isfinite(self.dormant))):
            raise OnOffError("dual field contains non-finite nodes")
        if np.min(self.active) < -1e-12 or np.min(self.dormant) < -1e-12:
            raise OnOffError("dual field lost positivity")
        if upper is not None and self.sup() > upper * (1.0 + 1e-10):
            raise OutOfBall(f"dual field sup {self.sup()} exceeds bound {upper}")

    def pair_with(self, mu: FiniteMeasure) -> float:
        """<mu, field> for an atomic measure inside the grid (linear interpolation)."""
        if mu.n_atoms == 0:
            return 0.0
        if mu.dim != 1:
            raise BadDimension("field pairing needs a 1-D measure")
        xs = self.grid.xs
        positions = mu.positions[:, 0]
        if positions.min() < self.grid.x_min or positions.max() > self.grid.x_max:
            raise ValueError("measure atom outside the solver grid")
        values = np.where(
            mu.states == ACTIVE,
            np.interp(positions, xs, self.active),
            np.interp(positions, xs, self.dormant),
        )
        return float(np.dot(mu.weights, values))

    def copy(self) -> "DualField":
        return DualField(self.grid, self.active.copy(), self.dormant.copy(), self.time)


# -- method of lines -------------------------------------------------------------


def _neumann_laplacian(f: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(f)
    out[1:-1] = f[2:] - 2.0 * f[1:-1] + f[:-2]
    out[0] = 2.0 * (f[1] - f[0])
    out[-1] = 2.0 * (f[-2] - f[-1])
    return out / (dx * dx)


def _mol_integrate(mech: BranchingMechanism, grid: DualGrid, fa, fd, t_end, dt_max):
    """SSP-RK3 time stepping of the semilinear system; returns fields at t_end."""
    n_steps = max(1, int(math.ceil(t_end / dt_max - 1e-12)))
    dt = t_end / n_steps
    a = fa.copy()
    d = fd.copy()

    def rhs(va, vd):
        pa, pd = mech.apply(va, vd)
        return 0.5 * _neumann_laplacian(va, grid.dx) - pa, -pd

    for _ in range(n_steps):
        k1a, k1d = rhs(a, d)
        u1a = a + dt * k1a
        u1d = d + dt * k1d
        k2a, k2d = rhs(u1a, u1d)
        u2a = 0.75 * a + 0.25 * (u1a + dt * k2a)
        u2d = 0.75 * d + 0.25 * (u1d + dt * k2d)
        k3a, k3d = rhs(u2a, u2d)
        a = a / 3.0 + (2.0 / 3.0) * (u2a + dt * k3a)
        d = d / 3.0 + (2.0 / 3.0) * (u2d + dt * k3d)
    return a, d, n_steps, dt


@dataclass
class PdeSolution:
    field: DualField
    variant: str
    dx: float
    dt: float
    n_steps: int
    error_estimate: float | None
    boundary_values: tuple[float, float]


def _initial_data(phi, grid: DualGrid, variant: str, epsilon: float | None):
    fa = phi.state_profile(grid.xs, ACTIVE).astype(float)
    fd = phi.state_profile(grid.xs, DORMANT).astype(float)
    if variant == VARIANT_SBM:
        return fa, fd
    if variant == VARIANT_EPS:
        if epsilon is None or not (epsilon > 0.0):
            raise NonPositiveEpsilon("eps-dual needs epsilon > 0")
        return -np.expm1(-epsilon * fa) / epsilon, -np.expm1(-epsilon * fd) / epsilon
    if variant == VARIANT_BBM:
        # multiplicative coordinates u = exp(-phi); integrate w = 1 - u, which
        # obeys the same system with data 1 - exp(-phi), and map back at the end
        return -np.expm1(-fa), -np.expm1(-fd)
    raise ValueError(f"unknown variant {variant!r}")


def solve_spatial_dual_pde(
    params: ModelParams,
    phi,
    t_end: float,
    variant: str = VARIANT_SBM,
    epsilon: float | None = None,
    dx: float = 0.02,
    grid: DualGrid | None = None,
    dt: float | None = None,
    richardson: bool = True,
    leak_tol: float = 1e-8,
) -> PdeSolution:
    """Solve the chosen dual system on a truncated 1-D domain.

    Returns the field at t_end plus, when richardson=True, a grid-refinement
    error estimate from a dx/2 companion solve. The field stays nonnegative
    and below the initial sup (discrete maximum principle under the CFL bound).
    """
    if params.dim != 1:
        raise BadDimension("spatial dual solvers support dim = 1 only")
    if not phi.continuous:
        raise ValueError(f"{phi.name} is not continuous; the grid solvers accept continuous data only")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if grid is None:
        grid = grid_for(phi, t_end, dx)
    mech = BranchingMechanism.from_params(params)
    dt_max = CFL_NUMBER * grid.dx**2
    if dt is not None:
        if dt > dt_max * (1.0 + 1e-12):
            raise CFLViolation(f"dt={dt} exceeds the stability bound {dt_max}")
        dt_max = dt

    fa, fd = _initial_data(phi, grid, variant, epsilon)
    sup0 = max(float(fa.max(initial=0.0)), float(fd.max(initial=0.0)))
    a, d, n_steps, dt_used = _mol_integrate(mech, grid, fa, fd, t_end, dt_max)

    if np.min(a) < -1e-12 or np.min(d) < -1e-12:
        raise OnOffError("method-of-lines field lost positivity")
    sup_end = max(float(np.max(a)), float(np.max(d)))
    if sup_end > sup0 * (1.0 + 1e-10) + 1e-14:
        raise OnOffError("method-of-lines field exceeded its initial sup bound")
    boundary = (float(max(abs(a[0]), abs(d[0]))), float(max(abs(a[-1]), abs(d[-1]))))
    if phi.vanishes_at_infinity and max(boundary) > leak_tol * max(phi.sup_bound, 1e-300):
        raise BoundaryLeak(f"boundary nodes reached {max(boundary)}; widen the grid")

    if variant == VARIANT_BBM:
        a, d = 1.0 - a, 1.0 - d

    err = None
    if richardson:
        fine = solve_spatial_dual_pde(
            params, phi, t_end, variant, epsilon, grid=grid.refined(), richardson=False, leak_tol=leak_tol
        )
        err = float(
            max(
                np.max(np.abs(fine.field.active[::2] - a)),
                np.max(np.abs(fine.field.dormant[::2] - d)),
            )
            / 3.0  # second-order spatial stencil
        )
    field = DualField(grid, a, d, float(t_end))
    return PdeSolution(field, variant, grid.dx, dt_used, n_steps, err, boundary)


# -- epsilon cascade --------------------------------------------------------------


@dataclass
class CascadeRow:
    epsilon: float
    sup_gap: float
    gap_over_eps: float
    initial_sup_gap: float
    paired_eps: float | None = None
    paired_limit: float | None = None


@dataclass
class CascadeReport:
    rows: list[CascadeRow]
    limit: PdeSolution
    phi_sup: float

    @property
    def gaps_strictly_decreasing(self) -> bool:
        gaps = [row.sup_gap for row in self.rows]
        return all(b < a for a, b in zip(gaps, gaps[1:]))


def eps_cascade(
    params: ModelParams,
    phi,
    t_end: float,
    eps_list,
    dx: float = 0.02,
    mu: FiniteMeasure | None = None,
) -> CascadeReport:
    """Solve the fixed-scale dual for each epsilon and the limit dual once;
    report grid sup-norm gaps (decreasing epsilon should tighten them)."""
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be positive and strictly decreasing")
    grid = grid_for(phi, t_end, dx)
    limit = solve_spatial_dual_pde(params, phi, t_end, VARIANT_SBM, grid=grid, richardson=True)
    rows = []
    phi_a = phi.state_profile(grid.xs, ACTIVE)
    phi_d = phi.state_profile(grid.xs, DORMANT)
    for eps in eps_list:
        sol = solve_spatial_dual_pde(params, phi, t_end, VARIANT_EPS, epsilon=eps, grid=grid, richardson=False)
        gap = max(
            float(np.max(np.abs(sol.field.active - limit.field.active))),
            float(np.max(np.abs(sol.field.dormant - limit.field.dormant))),
        )
        init_gap = max(
            float(np.max(np.abs(-np.expm1(-eps * phi_a) / eps - phi_a))),
            float(np.max(np.abs(-np.expm1(-eps * phi_d) / eps - phi_d))),
        )
        row = CascadeRow(eps, gap, gap / eps, init_gap)
        if mu is not None:
            row.paired_eps = sol.field.pair_with(mu)
            row.paired_limit = limit.field.pair_with(mu)
        rows.append(row)
    return CascadeReport(rows, limit, phi.sup_bound)
