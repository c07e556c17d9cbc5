"""Radially decreasing ground states of the Minkowski mean-curvature equation.

The library integrates the radial Cauchy problem in a regularized flux
variable, classifies initial heights into turning and crossing sets,
bisects the gap between them to a certified ground-state profile, and
independently seeds/cross-checks the bracket with a constrained
variational minimization on balls.
"""

__version__ = "0.1.0"

from .nonlinearity import (
    AssumptionReport,
    Nonlinearity,
    NonlinearityError,
    Thresholds,
    check_assumptions,
    compute_thresholds,
    eval_F,
    eval_f,
    from_spec,
    power_family,
    sine_family,
    tabulated_family,
    truncate_at_beta,
)
from .integrator import (
    IntegratorConfig,
    RadialIntegrator,
    RadialState,
    StiffnessError,
    advance,
    energy_residual,
    flux_from_slope,
    slope_from_flux,
    taylor_start,
    vector_field,
)
from .shooting import (
    Bracket,
    BracketError,
    GroundStateSolution,
    Outcome,
    ShootConfig,
    ShotRecord,
    bisect_ground_state,
    classify_scan,
    find_bracket,
    shoot,
    verify_ground_state,
)
from .variational import (
    GridFunction,
    MinimizeConfig,
    MinimizeResult,
    VariationalError,
    choose_rho,
    discrete_J,
    discrete_J_gradient,
    minimize_J,
    ode_residual_of_minimizer,
    seed_from_minimizer,
    seed_gamma,
    trial_w_rho,
)

__all__ = [name for name in dir() if not name.startswith("_")]
