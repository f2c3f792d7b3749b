"""Stochastically guaranteed reachtubes for nonlinear and neural ODEs.

Builds sequences of ellipsoidal reachsets whose radii hold with a
configurable confidence and tolerance, by per-timestep stochastic
global optimization over the initial sphere with certified safety caps.
"""

from ._accel import BACKEND, NUMBA_ENABLED
from .engine import (GdResult, PlanResult, ReachtubeResult, SlrConfig,
                     TimestepContext, TimestepResult, gradient_descent,
                     loss, loss_gradient, plan_iterations, plan_reachtube,
                     refine_with_mu_schedule, run_reachtube, run_timestep,
                     safety_radius)
from .errors import (ConfigError, DomainError, EnclosureError,
                     FieldConfigError, IntegrationError, OracleError,
                     SingularFlowError, SlrError, UnsupportedFieldError,
                     ZeroDistanceError)
from .fields import (NeuralFieldSpec, VectorField, build_field,
                     linear_field, neural_field, register_field_family,
                     registered_families, user_field, vanderpol_field)
from .geometry import (CoverageSet, Ellipsoid, SafetyCap,
                       canonicalize_angles, cap_probability_exact,
                       cap_probability_lower_bound, cartesian_to_polar,
                       coverage_confidence, dist_gradient, dist_in_metric,
                       optimal_metric, polar_jacobian, polar_to_cartesian,
                       symmetric_sqrt)
from .integrate import (IvpSettings, SensitivitySolution, SolveResult,
                        flow_endpoint, sensitivity_endpoint, solve_flow,
                        solve_flow_with_sensitivity)
from .interval import (Interval, IntervalMatrix, LipschitzEstimate,
                       RegionBox, ball_box, box_of_cap,
                       interval_sensitivity, lipschitz_bound,
                       lipschitz_over_region)
from .oracle import (GridVerdict, McEstimate, fd_jacobian, grid_verify_cap,
                     mc_reachset, mc_reachtube, reference_flow)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "NUMBA_ENABLED", "__version__",
    # engine
    "GdResult", "PlanResult", "ReachtubeResult", "SlrConfig",
    "TimestepContext", "TimestepResult", "gradient_descent", "loss",
    "loss_gradient", "plan_iterations", "plan_reachtube",
    "refine_with_mu_schedule", "run_reachtube", "run_timestep",
    "safety_radius",
    # errors
    "ConfigError", "DomainError", "EnclosureError", "FieldConfigError",
    "IntegrationError", "OracleError", "SingularFlowError", "SlrError",
    "UnsupportedFieldError", "ZeroDistanceError",
    # fields
    "NeuralFieldSpec", "VectorField", "build_field", "linear_field",
    "neural_field", "register_field_family", "registered_families",
    "user_field", "vanderpol_field",
    # geometry
    "CoverageSet", "Ellipsoid", "SafetyCap", "canonicalize_angles",
    "cap_probability_exact", "cap_probability_lower_bound",
    "cartesian_to_polar", "coverage_confidence", "dist_gradient",
    "dist_in_metric", "optimal_metric", "polar_jacobian",
    "polar_to_cartesian", "symmetric_sqrt",
    # integrate
    "IvpSettings", "SensitivitySolution", "SolveResult", "flow_endpoint",
    "sensitivity_endpoint", "solve_flow", "solve_flow_with_sensitivity",
    # interval
    "Interval", "IntervalMatrix", "LipschitzEstimate", "RegionBox",
    "ball_box", "box_of_cap", "interval_sensitivity", "lipschitz_bound",
    "lipschitz_over_region",
    # oracle
    "GridVerdict", "McEstimate", "fd_jacobian", "grid_verify_cap",
    "mc_reachset", "mc_reachtube", "reference_flow",
]
