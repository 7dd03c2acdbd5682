"""Exact 1D quadratic optimal transport between grid densities.

Between two unit-mass densities on the line the optimal plan is the monotone
rearrangement: with F, G the cumulative distribution functions,

    W2^2(u, v) = integral_0^1 |F^{-1}(s) - G^{-1}(s)|^2 ds,
    T = G^{-1} o F  pushes u onto v,

and the first variation of u -> W2^2(u, v)/2 is the potential phi with
phi'(x) = x - T(x).  CDFs are stored at cell edges; quantiles invert them
piecewise-linearly with the left-continuous convention on flat (vacuum)
segments.  The mass-space integral is evaluated by an M-point midpoint rule,
M = 4n unless configured otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .grid import Grid, GridField, same_grid

CDF_MASS_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Cdf1D:
    """Cumulative masses at the n+1 cell edges; values[0] = 0, values[n] = 1."""

    grid: Grid
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class TransportPlan1D:
    """Monotone-rearrangement plan from `source` to `target`.

    map_values samples the optimal map at the source cell centers; potential
    is the zero-mean Kantorovich potential with phi' = id - T.
    """

    source: Cdf1D
    target: Cdf1D
    map_values: np.ndarray
    potential: GridField


def cdf_values(values: np.ndarray, dx: float) -> np.ndarray:
    """Edge CDF of a nonnegative value array, normalized to end exactly at 1."""
    acc = np.concatenate(([0.0], np.cumsum(values))) * dx
    total = acc[-1]
    if abs(total - 1.0) > CDF_MASS_TOL:
        raise DomainError(f"density mass must be 1 within {CDF_MASS_TOL}, got {total!r}")
    return acc / total


def cdf(h: GridField) -> Cdf1D:
    if np.any(h.values < 0.0):
        raise DomainError("cdf requires a nonnegative density")
    return Cdf1D(h.grid, cdf_values(h.values, h.grid.dx))


def quantile_values(edge_cdf: np.ndarray, edges: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Piecewise-linear inverse CDF, left-continuous across flat segments."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise DomainError("quantile argument must lie in [0, 1]")
    scalar = s.ndim == 0
    s1 = np.atleast_1d(s)
    # first edge with cdf >= s; all earlier edges are strictly below s
    hi = np.searchsorted(edge_cdf, s1, side="left")
    hi = np.clip(hi, 1, len(edge_cdf) - 1)
    lo = hi - 1
    gap = edge_cdf[hi] - edge_cdf[lo]
    frac = np.where(gap > 0.0, (s1 - edge_cdf[lo]) / np.where(gap > 0.0, gap, 1.0), 0.0)
    out = edges[lo] + frac * (edges[hi] - edges[lo])
    # endpoints: edges of the support rather than of the domain
    if np.any(s1 == 0.0):
        left = edges[np.searchsorted(edge_cdf, 0.0, side="right") - 1]
        out[s1 == 0.0] = left
    return out[0] if scalar else out


def quantile(c: Cdf1D, s) -> np.ndarray:
    return quantile_values(c.values, c.grid.edges, s)


def _mass_midpoints(m: int) -> np.ndarray:
    return (np.arange(m) + 0.5) / m


def resolve_m(grid: Grid, m=None) -> int:
    return 4 * grid.n if m is None else int(m)


def w2sq_from_cdfs(cu: Cdf1D, cv: Cdf1D, m=None) -> float:
    m = resolve_m(cu.grid, m)
    s = _mass_midpoints(m)
    qu = quantile(cu, s)
    qv = quantile(cv, s)
    d = qu - qv
    return float(np.dot(d, d) / m)


def w2_distance(u: GridField, v: GridField, m=None) -> float:
    """Quantile-formula Wasserstein-2 distance between unit-mass densities."""
    same_grid(u, v)
    return float(np.sqrt(max(w2sq_from_cdfs(cdf(u), cdf(v), m), 0.0)))


def center_cdf_values(edge_cdf: np.ndarray) -> np.ndarray:
    """CDF evaluated at cell centers (edge averages: the CDF is linear per cell)."""
    return 0.5 * (edge_cdf[:-1] + edge_cdf[1:])


def potential_from_map(grid: Grid, map_values: np.ndarray) -> GridField:
    """Zero-mean cumulative midpoint integral of (id - T) from the left edge."""
    r = grid.centers - map_values
    phi = grid.dx * np.cumsum(r) - 0.5 * grid.dx * r
    phi = phi - grid.dx * np.sum(phi) / grid.length
    return GridField(grid, phi)


def optimal_map(u: GridField, v: GridField) -> TransportPlan1D:
    """Monotone map T = G^{-1} o F sampled at the source cell centers."""
    grid = same_grid(u, v)
    cu = cdf(u)
    cv = cdf(v)
    s_mid = center_cdf_values(cu.values)
    t = quantile(cv, s_mid)
    return TransportPlan1D(cu, cv, t, potential_from_map(grid, t))


def kantorovich_potential(u: GridField, v: GridField) -> GridField:
    """First variation of u -> W2^2(u, v)/2, normalized to zero grid mean."""
    return optimal_map(u, v).potential


def transport_cost(plan: TransportPlan1D, m=None) -> float:
    """Squared transport cost of the plan, from its stored marginal CDFs."""
    return w2sq_from_cdfs(plan.source, plan.target, m)


def pushforward_cell_masses(plan: TransportPlan1D) -> np.ndarray:
    """Source mass landing in each target cell under the monotone plan.

    Mass-interval [V_k, V_{k+1}] of the source is exactly what the plan routes
    into target cell k, so the result reproduces the target cell masses up to
    rounding; exposed so that invariance tests exercise the construction.
    """
    v = plan.target.values
    return np.diff(v)
