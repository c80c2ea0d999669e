"""Mixed Nash equilibria of pairwise zero-sum games on discretized tori.

Library + CLI for solving entropy-regularized equilibria by damped
best-response iteration, integrating the time-averaged transport flow
(fixed temperature or annealed), simulating the matching Langevin
particle system, and checking the analytic decay envelopes along the way.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateDensityError,
    GridMismatchError,
    InvalidTemperatureError,
    ScheduleValidationError,
    StepSizeError,
    SupportError,
    UnsupportedDimensionError,
)
from .grid import (
    Density,
    PotentialField,
    TorusGrid,
    gibbs_from_potential,
    normalize,
    smoothed,
    uniform_density,
)
from .game import (
    Game,
    GameConstants,
    PairwiseKernel,
    builtin_game,
    check_pairwise_zero_sum,
    effective_potential,
    game_constants,
    load_kernel_file,
    save_kernel_file,
)
from .metrics import (
    MetricsRecord,
    energy,
    entropic_min_value,
    fisher_information,
    lebesgue_entropy,
    lyapunov,
    ni_regularized,
    ni_regularized_definitional,
    ni_unregularized,
    relative_entropy,
    tv_distance,
    w1_circle,
)
from .equilibrium import (
    FixedPointReport,
    best_response,
    epsilon_for_tau,
    solve_fixed_point,
)
from .dynamics import (
    AnnealedSchedule,
    DynamicsState,
    FixedSchedule,
    IntegratorConfig,
    RateConstants,
    annealed_bound,
    averaging_step,
    bernoulli_flux_weight,
    derive_certified_schedule,
    fokker_planck_step,
    rate_constants,
    run,
    stability_limit,
    validate_annealing,
)
from .particles import (
    ParticleEnsemble,
    histogram,
    init_particles,
    langevin_step,
    load_positions,
    run_particles,
    save_positions,
)
