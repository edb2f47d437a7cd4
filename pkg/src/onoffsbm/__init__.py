"""Simulation and verification laboratory for critical on/off branching Brownian
motion, its measure-valued diffusion limit, and the on/off Feller total-mass
diffusion: exact event-driven particle simulation, deterministic dual solvers,
and the analytics needed to cross-check them against each other.
"""

from .core import (
    ACTIVE,
    DORMANT,
    BadDimension,
    BallIndicator,
    ConstantFunction,
    FiniteMeasure,
    GaussianBump,
    MissingDerivative,
    ModelParams,
    NonPositiveEpsilon,
    NonPositiveRate,
    OnOffError,
    RandomSource,
    TentFunction,
    TestFunction,
    pair_integral,
    poissonize,
    validate_params,
)
from .particle import (
    EventRecord,
    LaplaceEstimate,
    ParticleSystem,
    PopulationCapExceeded,
    Snapshot,
    laplace_functional_mc,
    martingale_ensemble,
    martingale_residual,
    next_event,
    simulate_until,
    total_masses,
)
from .feller import (
    FellerEnsemble,
    FellerState,
    HitStats,
    SdeScheme,
    feller_step,
    hit_zero_stats,
    persistence_check,
    persistence_report,
    simulate_feller_ensemble,
    wilson_interval,
)
from .dual import (
    BoundaryLeak,
    BranchingMechanism,
    CFLViolation,
    DualField,
    DualGrid,
    NonConvergent,
    OutOfBall,
    eps_cascade,
    psi_eval,
    solve_spatial_dual_pde,
    solve_total_mass_dual,
)
from .picard import ContractionViolated, NoConvergence, glue_intervals, picard_solve_interval
from .analytics import (
    BoundaryCertificate,
    MeanMatrix,
    NonPositiveLambda,
    ResolventMatrix,
    boundary_certificate,
    mean_matrix,
    mean_solution,
    resolvent,
    supermartingale_report,
    supermartingale_series,
)

__version__ = "0.1.0"
