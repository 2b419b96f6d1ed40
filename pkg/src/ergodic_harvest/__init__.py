"""Ergodic singular control of one-dimensional diffusions: threshold harvesting.

Solves for the optimal reflection threshold ``beta_star`` and long-run average
rate ``lambda_star``, builds the value gradient of the associated HJB
quasi-variational inequality and checks optimality by simulating the reflected
controlled diffusion.
"""

from .model import (
    AssumptionReport,
    CriticalPoints,
    ModelError,
    ModelSpec,
    build_catalog_model,
    critical_points,
    custom_model,
    model_from_config,
    rho_lower,
    rho_upper,
    validate_assumptions,
)
from .scale_speed import ImproperIntegral, QuadratureError, ScaleSpeed, drift_identity_residual
from .free_boundary import (
    HjbReport,
    SolverError,
    ThresholdSolution,
    ValueGradient,
    big_lambda,
    solve_threshold,
    theta,
    theta_ode_residual,
    value_gradient,
    verify_hjb,
)
from .simulate import (
    SimConfig,
    SimResult,
    SimulationError,
    calibrate_dt_constant,
    estimate_expected,
    estimate_pathwise,
    occupation_check,
    simulate_path,
    threshold_sweep,
)

__version__ = "0.1.0"
