"""JKO minimizing-movement solver and diagnostics for the 1D thin-film Muskat system."""

from .errors import (
    ConfigurationError,
    DomainError,
    LinearSolverError,
    ShapeError,
    StepFailure,
)
from .functionals import DensityPair, ModelParams, dissipation_DH, energy, entropy
from .grid import Grid, GridField, build_grid, gradient, integrate, laplacian, second_moment
from .jko import (
    FluxFields,
    JkoConfig,
    StepReport,
    TrajectoryReport,
    el_residual,
    flux_fields,
    jko_step,
    run_trajectory,
    step_entropy_estimate,
)
from .transport import (
    Cdf1D,
    TransportPlan1D,
    cdf,
    kantorovich_potential,
    optimal_map,
    quantile,
    transport_cost,
    w2_distance,
)

__all__ = [
    "Cdf1D",
    "ConfigurationError",
    "DensityPair",
    "DomainError",
    "FluxFields",
    "Grid",
    "GridField",
    "JkoConfig",
    "LinearSolverError",
    "ModelParams",
    "ShapeError",
    "StepFailure",
    "StepReport",
    "TrajectoryReport",
    "TransportPlan1D",
    "build_grid",
    "cdf",
    "dissipation_DH",
    "el_residual",
    "energy",
    "entropy",
    "flux_fields",
    "gradient",
    "integrate",
    "jko_step",
    "kantorovich_potential",
    "laplacian",
    "optimal_map",
    "quantile",
    "run_trajectory",
    "second_moment",
    "step_entropy_estimate",
    "transport_cost",
    "w2_distance",
]
