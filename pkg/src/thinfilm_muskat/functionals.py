"""Energy, entropy, and entropy-dissipation functionals on discrete densities.

The driving energy is

    E(f, g) = 1/2 * integral[ (A-B)|f'|^2 + B|(f+g)'|^2 + (a-b)f^2 + b(f+g)^2 ]

with capillary coefficients A > B > 0 and gravity coefficients a, b, c >= 0
tied by c*B = b.  The Dirichlet parts are evaluated through interior edge
differences, the quadratic form whose exact Euclidean derivative is the
reflected 3-point laplacian; this keeps the descent objective and the descent
direction used by the stepper consistent to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .grid import Grid, GridField, edge_diff_sq_sum, gradient_values, laplacian_values, same_grid

PARAM_TIE_TOL = 1e-12
DENSITY_MASS_TOL = 1e-12
NEGATIVE_CLAMP = 1e-12

CONSTRAINT_HINT = "model coefficients must satisfy cB=b, and A>B>0"


@dataclass(frozen=True)
class ModelParams:
    """Capillary (A, B), gravity (a, b, c) coefficients and the step size tau."""

    A: float
    B: float
    a: float
    b: float
    c: float
    tau: float

    def __post_init__(self):
        if min(self.a, self.b, self.c) < 0.0:
            raise ConfigurationError(f"{CONSTRAINT_HINT}: gravity coefficients must be nonnegative")
        if not self.A > self.B:
            raise ConfigurationError(f"A > B required ({CONSTRAINT_HINT}); got A={self.A}, B={self.B}")
        if not self.B > 0.0:
            raise ConfigurationError(f"B > 0 required ({CONSTRAINT_HINT}); got B={self.B}")
        if abs(self.c * self.B - self.b) > PARAM_TIE_TOL:
            raise ConfigurationError(
                f"{CONSTRAINT_HINT}: c*B = {self.c * self.B!r} but b = {self.b!r}"
            )
        if not self.tau > 0.0:
            raise ConfigurationError(f"time step tau must be positive, got {self.tau}")


@dataclass(frozen=True, eq=False)
class DensityPair:
    """Two nonnegative unit-mass layer heights (f, g) on a common grid."""

    f: GridField
    g: GridField
    grid: Grid = field(init=False)

    def __post_init__(self):
        grid = same_grid(self.f, self.g)
        object.__setattr__(self, "grid", grid)
        for name in ("f", "g"):
            h = getattr(self, name)
            v = h.values
            if np.any(v < -NEGATIVE_CLAMP):
                raise DomainError(f"{name} has negative entries (min {v.min():.3e})")
            if np.any(v < 0.0):
                h = GridField(grid, np.maximum(v, 0.0))
                object.__setattr__(self, name, h)
            mass = grid.dx * float(np.sum(h.values))
            if abs(mass - 1.0) > DENSITY_MASS_TOL:
                raise DomainError(f"{name} must have unit mass, got {mass!r}")


def energy_arrays(f: np.ndarray, g: np.ndarray, dx: float, p: ModelParams) -> float:
    """E(f, g) on raw value arrays; the hot path of the inner solver."""
    fg = f + g
    dirichlet = (p.A - p.B) * edge_diff_sq_sum(f, dx) + p.B * edge_diff_sq_sum(fg, dx)
    quadratic = (p.a - p.b) * np.dot(f, f) + p.b * np.dot(fg, fg)
    return 0.5 * dx * (dirichlet + quadratic)


def energy(f: GridField, g: GridField, p: ModelParams) -> float:
    grid = same_grid(f, g)
    return energy_arrays(f.values, g.values, grid.dx, p)


def entropy(h: GridField) -> float:
    """integral of h ln(h) with the convention 0 ln 0 = 0.

    Entries in (-1e-12, 0) are clamped to zero first; they are projection
    arithmetic noise, not genuine negativity.
    """
    v = h.values
    if np.any(v < -NEGATIVE_CLAMP):
        raise DomainError(f"entropy requires a nonnegative field (min {v.min():.3e})")
    v = np.maximum(v, 0.0)
    pos = v > 0.0
    return float(h.grid.dx * np.sum(v[pos] * np.log(v[pos])))


def dissipation_DH(f: GridField, g: GridField, p: ModelParams) -> float:
    """(A-B)||lap f||^2 + B||lap(f+g)||^2 + (a-b)||f'||^2 + b||(f+g)'||^2.

    May be negative when a < b.
    """
    grid = same_grid(f, g)
    dx = grid.dx
    fg = f.values + g.values
    lap_f = laplacian_values(f.values, dx)
    lap_fg = laplacian_values(fg, dx)
    grad_f = gradient_values(f.values, dx)
    grad_fg = gradient_values(fg, dx)
    return float(
        dx
        * (
            (p.A - p.B) * np.dot(lap_f, lap_f)
            + p.B * np.dot(lap_fg, lap_fg)
            + (p.a - p.b) * np.dot(grad_f, grad_f)
            + p.b * np.dot(grad_fg, grad_fg)
        )
    )


def energy_lower_bound_gap(f: GridField, g: GridField, p: ModelParams) -> float:
    """Gap C in E >= (A-B)/4 ||f'||^2 + B/2 ||(f+g)'||^2 - C for this pair.

    The coercivity constant is not reproduced from first principles; runs
    monitor the measured gap instead and assert it stays finite.
    """
    grid = same_grid(f, g)
    dx = grid.dx
    fg = f.values + g.values
    lower = 0.25 * (p.A - p.B) * dx * edge_diff_sq_sum(f.values, dx)
    lower += 0.5 * p.B * dx * edge_diff_sq_sum(fg, dx)
    return float(lower - energy(f, g, p))
