"""Minimizing-movement stepper for the coupled thin-film system.

One step from (f0, g0) minimizes

    F_tau(u, v) = [W2^2(u, f0) + B * W2^2(v, g0)] / (2 tau) + E(u, v)

over the product of discrete simplices {w >= 0, dx * sum(w) = 1}.  The solver
is spectral projected gradient descent: Barzilai-Borwein trial steps, Armijo
backtracking (nonmonotone Grippo-Lucidi reference, parameter 1e-4), Euclidean
simplex projection.  The returned iterate is the best one seen, so
F_tau(out) <= F_tau(in) and in particular the energy never increases across a
step.  The W2^2 gradients are the exact 1D Kantorovich potentials divided by
tau; the energy gradient is the reflected-laplacian form consistent with the
edge-difference Dirichlet energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import ConfigurationError, StepFailure
from .functionals import DensityPair, ModelParams, dissipation_DH, energy, energy_arrays, entropy
from .grid import Grid, GridField, gradient_values, laplacian_values
from .profiles import smooth_bump
from .transport import (
    cdf_values,
    center_cdf_values,
    quantile_values,
    resolve_m,
)

ARMIJO_PARAM = 1e-4
LINESEARCH_MEMORY = 10
STAGNATION_WINDOW = 5
BB_STEP_MIN = 1e-12
BB_STEP_MAX = 1e6

# Slack multiplier for the discrete inequality checks: tolerance is
# DISC_SLACK_COEFF * (dx^2 + 1/m) * scale.  Calibrated once against the flat
# scenario (zero floor) and refinement sweeps of the bump scenario, then
# frozen; see tests/test_acceptance.py.
DISC_SLACK_COEFF = 10.0


def disc_tolerance(grid: Grid, m: int, scale: float = 1.0) -> float:
    """Discretization slack for inequalities that are exact only in the continuum."""
    return DISC_SLACK_COEFF * (grid.dx**2 + 1.0 / m) * scale


@dataclass(frozen=True)
class JkoConfig:
    """Inner-solver knobs for one minimizing-movement step."""

    inner_max_iters: int = 2000
    inner_tol: float = 1e-7
    step_shrink: float = 0.5
    step_grow: float = 2.0
    positivity_floor: float = 0.0
    m_quadrature: int | None = None

    def __post_init__(self):
        if not self.inner_tol > 0.0:
            raise ConfigurationError("inner_tol must be positive")
        if not (0.0 < self.step_shrink < 1.0 < self.step_grow):
            raise ConfigurationError("need 0 < step_shrink < 1 < step_grow")
        if self.positivity_floor < 0.0:
            raise ConfigurationError("positivity_floor must be nonnegative")
        if self.inner_max_iters < 1:
            raise ConfigurationError("inner_max_iters must be at least 1")


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics of one minimizing-movement step."""

    w2_f: float
    w2_g: float
    energy_before: float
    energy_after: float
    entropy_f: float
    entropy_g: float
    inner_iters: int
    el_residual_f: float
    el_bound_f: float
    el_residual_g: float
    el_bound_g: float
    entropy_estimate_ok: bool
    entropy_estimate_lhs: float
    entropy_estimate_rhs: float
    objective_value: float
    grad_mapping_norm: float
    converged_by: str


@dataclass(frozen=True, eq=False)
class FluxFields:
    """Velocity surrogates w and mass fluxes j = sqrt(density) * w."""

    j_f: GridField
    w_f: GridField
    j_g: GridField
    w_g: GridField


def project_unit_mass(values: np.ndarray, dx: float) -> np.ndarray:
    """Euclidean projection onto {w >= 0, dx * sum(w) = 1}.

    Exact sort-and-threshold construction; the result carries unit mass up to
    accumulation rounding and exact zeros on the inactive set.
    """
    target = 1.0 / dx
    u = np.sort(values)[::-1]
    css = np.cumsum(u) - target
    j = np.arange(1, values.size + 1)
    rho = np.nonzero(u - css / j > 0.0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(values - theta, 0.0)


def tangent_cone_residual(x: np.ndarray, g: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Projection of -g onto the tangent cone of the simplex at x.

    The steepest feasible descent direction: d_i = -g_i - mu on free cells and
    max(-g_i - mu, 0) where x_i = 0, with mu fixing sum(d) = 0.  Its norm is
    the first-order stationarity certificate; unlike the unit-step gradient
    mapping it is insensitive to the extreme curvature the transport term
    develops in nearly-empty cells.  Cells at or below `floor` are treated as
    vacuum: their masses are too small for emptying them to change the
    objective, yet their one-sided transport gradients can be enormous.
    """
    active = x <= floor
    neg_g = -g
    s0 = float(np.sum(neg_g[~active]))
    n_free = int(np.count_nonzero(~active))
    t = np.sort(neg_g[active])[::-1]
    # h(mu) = s0 - n_free*mu + sum_{t_j > mu} (t_j - mu), piecewise linear
    mu = s0 / n_free if n_free else 0.0
    csum = 0.0
    for k in range(len(t) + 1):
        mu = (s0 + csum) / (n_free + k)
        hi = t[k - 1] if k > 0 else np.inf
        lo = t[k] if k < len(t) else -np.inf
        if lo <= mu <= hi:
            break
        if k < len(t):
            csum += t[k]
    d = neg_g - mu
    d[active] = np.maximum(d[active], 0.0)
    return d


class _StepProblem:
    """Objective/gradient of F_tau with the previous pair frozen."""

    def __init__(self, prev: DensityPair, p: ModelParams, cfg: JkoConfig):
        grid = prev.grid
        self.grid = grid
        self.p = p
        self.dx = grid.dx
        self.m = resolve_m(grid, cfg.m_quadrature)
        self.s_quad = (np.arange(self.m) + 0.5) / self.m
        self.cdf_f0 = cdf_values(prev.f.values, self.dx)
        self.cdf_g0 = cdf_values(prev.g.values, self.dx)
        self.qf0 = quantile_values(self.cdf_f0, grid.edges, self.s_quad)
        self.qg0 = quantile_values(self.cdf_g0, grid.edges, self.s_quad)
        self._he_w = None

    def w2sq_parts(self, u: np.ndarray, v: np.ndarray):
        qu = quantile_values(cdf_values(u, self.dx), self.grid.edges, self.s_quad)
        qv = quantile_values(cdf_values(v, self.dx), self.grid.edges, self.s_quad)
        du = qu - self.qf0
        dv = qv - self.qg0
        return float(np.dot(du, du) / self.m), float(np.dot(dv, dv) / self.m)

    def objective(self, u: np.ndarray, v: np.ndarray):
        w2sq_f, w2sq_g = self.w2sq_parts(u, v)
        e = energy_arrays(u, v, self.dx, self.p)
        f_val = (w2sq_f + self.p.B * w2sq_g) / (2.0 * self.p.tau) + e
        return f_val, w2sq_f, w2sq_g, e

    def _w2sq_half_grad(self, values: np.ndarray, ref_quantiles: np.ndarray) -> np.ndarray:
        """Exact gradient of u -> W2^2(u, ref)/2 under the M-point quadrature.

        This is the discrete realization of the Kantorovich potential times
        dx: differentiating the quantile of each mass midpoint through the
        edge CDF gives per-edge weights whose suffix sums form the gradient.
        Using it (rather than sampling the potential at cell centers) keeps
        the descent direction exactly consistent with the minimized
        objective, which the line search needs to reach tight stationarity.
        """
        edge_cdf = cdf_values(values, self.dx)
        edges = self.grid.edges
        s = self.s_quad
        hi = np.clip(np.searchsorted(edge_cdf, s, side="left"), 1, len(edge_cdf) - 1)
        lo = hi - 1
        gap = edge_cdf[hi] - edge_cdf[lo]
        beta = (s - edge_cdf[lo]) / gap
        residual = edges[lo] + beta * (edges[hi] - edges[lo]) - ref_quantiles
        edge_weight = np.zeros(len(edge_cdf))
        np.add.at(edge_weight, lo, residual * (self.dx / gap) * (beta - 1.0))
        np.add.at(edge_weight, hi, -residual * (self.dx / gap) * beta)
        suffix = np.cumsum(edge_weight[::-1])[::-1]
        return self.dx * suffix[1:] / self.m

    def gradient(self, u: np.ndarray, v: np.ndarray):
        p = self.p
        gw_u = self._w2sq_half_grad(u, self.qf0)
        gw_v = self._w2sq_half_grad(v, self.qg0)
        lap_u = laplacian_values(u, self.dx)
        lap_v = laplacian_values(v, self.dx)
        gu = gw_u / p.tau + self.dx * (-(p.A * lap_u + p.B * lap_v) + p.a * u + p.b * v)
        gv = p.B * gw_v / p.tau + self.dx * (-p.B * (lap_u + lap_v) + p.b * (u + v))
        return gu, gv

    def steepest_feasible(self, u, v, gu, gv):
        """Steepest feasible descent directions (limiting projected gradient)."""
        floor = 1e-12 / self.grid.length
        return tangent_cone_residual(u, gu, floor), tangent_cone_residual(v, gv, floor)

    def mapping_norm(self, u, v, gu, gv) -> float:
        """Limiting projected-gradient mapping: norm of the steepest feasible
        descent direction (projection of the negative gradient onto the
        tangent cone of the product simplex)."""
        ru, rv = self.steepest_feasible(u, v, gu, gv)
        return float(np.sqrt(np.dot(ru, ru) + np.dot(rv, rv)))

    def _energy_hessian_w(self) -> np.ndarray:
        """Sparse Hessian triplets of E in cumulative-mass (edge) coordinates.

        Coordinates are the changes of the edge CDF, one block per component,
        interior edges only; the cell change is the divided edge difference.
        Built once per step by applying the linear gradient map to basis
        vectors, which inherits the boundary rows for free.
        """
        if self._he_w is not None:
            return self._he_w
        n = self.grid.n
        dx = self.dx
        p = self.p
        k = n - 1
        he = np.empty((2 * k, 2 * k))
        basis = np.zeros(n + 1)
        for comp in range(2):
            for l in range(1, n):
                basis[:] = 0.0
                basis[l] = 1.0
                d = np.diff(basis) / dx
                lap = laplacian_values(d, dx)
                if comp == 0:
                    hu = dx * (-p.A * lap + p.a * d)
                    hv = dx * (-p.B * lap + p.b * d)
                else:
                    hu = dx * (-p.B * lap + p.b * d)
                    hv = dx * (-p.B * lap + p.b * d)
                col = -np.concatenate((np.diff(hu), np.diff(hv))) / dx
                he[:, comp * k + (l - 1)] = col
        rows, cols = np.nonzero(he)
        self._he_w = (rows, cols, he[rows, cols])
        return self._he_w

    def _w2_edge_bands(self, values: np.ndarray, ref_quantiles: np.ndarray,
                       curvature: bool = True):
        """Hessian bands (diag, sub) of W2^2/(2 tau) in edge coordinates;
        tridiagonal because each mass midpoint couples only the two edges of
        its cell.  With curvature=False only the always-PSD Gauss-Newton part
        is kept."""
        edge_cdf = cdf_values(values, self.dx)
        edges = self.grid.edges
        s = self.s_quad
        hi = np.clip(np.searchsorted(edge_cdf, s, side="left"), 1, len(edge_cdf) - 1)
        lo = hi - 1
        gap = edge_cdf[hi] - edge_cdf[lo]
        beta = (s - edge_cdf[lo]) / gap
        a = (self.dx / gap) * (beta - 1.0)
        b = -(self.dx / gap) * beta
        n_edges = len(edge_cdf)
        diag = np.zeros(n_edges)
        sub = np.zeros(n_edges)  # sub[l] couples edges (l, l+1) = (lo, hi)
        np.add.at(diag, lo, a * a)
        np.add.at(diag, hi, b * b)
        np.add.at(sub, lo, a * b)
        if curvature:
            r = edges[lo] + beta * (edges[hi] - edges[lo]) - ref_quantiles
            w = self.dx / (gap * gap)
            np.add.at(diag, lo, r * 2.0 * w * (beta - 1.0))
            np.add.at(diag, hi, r * 2.0 * w * beta)
            np.add.at(sub, lo, -r * w * (2.0 * beta - 1.0))
        scale = 1.0 / (self.p.tau * self.m)
        return diag * scale, sub * scale

    @staticmethod
    def _edge_variables(free_cells: np.ndarray) -> np.ndarray:
        """Variable id per interior edge, -1 for frozen edges.

        Edges between two free cells get their own variable.  A stretch of
        frozen edges separating free cells on both sides gets one shared
        variable: in cumulative-mass coordinates a constant shift across a
        vacuum run is exactly a mass flux through it, which lets the Newton
        step relocate stranded mass across empty regions in one move.
        """
        n = free_cells.size
        free_edge = free_cells[:-1] & free_cells[1:]
        has_left = np.cumsum(free_cells)[:-1] > 0
        has_right = np.cumsum(free_cells[::-1])[::-1][1:] > 0
        between = ~free_edge & has_left & has_right
        ids = np.full(n - 1, -1, dtype=np.int64)
        n_own = int(np.count_nonzero(free_edge))
        ids[free_edge] = np.arange(n_own)
        starts = between & ~np.concatenate(([False], between[:-1]))
        run_of_edge = np.cumsum(starts) - 1
        ids[between] = n_own + run_of_edge[between]
        return ids

    def newton_direction(self, u, v, gu, gv, free_cells_u, free_cells_v):
        """Newton trial direction in edge coordinates on the given free cells.

        Returns (du, dv) or None when the linear solve is unusable.  The
        direction is mass-neutral by construction.  The full transport
        curvature is tried first and the always-PSD Gauss-Newton part is the
        fallback whenever the solve fails or does not yield descent.
        """
        n = self.grid.n
        dx = self.dx
        k = n - 1
        # w-space gradient is (g_{l-1} - g_l)/dx, so the Newton rhs is +diff(g)/dx
        rhs = np.concatenate((np.diff(gu), np.diff(gv))) / dx

        ids_u = self._edge_variables(free_cells_u)
        ids_v = self._edge_variables(free_cells_v)
        nvar_u = int(ids_u.max()) + 1 if np.any(ids_u >= 0) else 0
        nvar_v = int(ids_v.max()) + 1 if np.any(ids_v >= 0) else 0
        nvar = nvar_u + nvar_v
        if nvar == 0:
            return None
        idvec = np.concatenate((ids_u, np.where(ids_v >= 0, ids_v + nvar_u, -1)))
        live = idvec >= 0
        sub_rhs = np.zeros(nvar)
        np.add.at(sub_rhs, idvec[live], rhs[live])

        he_rows, he_cols, he_vals = self._energy_hessian_w()
        he_keep = live[he_rows] & live[he_cols]
        base_r = idvec[he_rows[he_keep]]
        base_c = idvec[he_cols[he_keep]]
        base_v = he_vals[he_keep]

        idx = np.arange(1, n)
        ridge_r = np.arange(nvar)
        for curvature in (True, False):
            diag_u, sub_u = self._w2_edge_bands(u, self.qf0, curvature)
            diag_v, sub_v = self._w2_edge_bands(v, self.qg0, curvature)
            rows = [base_r, ridge_r]
            cols = [base_c, ridge_r]
            vals = [base_v, np.full(nvar, 1e-12)]
            for (dg, sb, off, fac) in ((diag_u, sub_u, 0, 1.0),
                                       (diag_v, sub_v, k, self.p.B)):
                dvar = idvec[off + idx - 1]
                keep = dvar >= 0
                rows.append(dvar[keep])
                cols.append(dvar[keep])
                vals.append(fac * dg[idx][keep])
                avar = idvec[off + idx[:-1] - 1]
                bvar = idvec[off + idx[:-1]]
                keep = (avar >= 0) & (bvar >= 0) & (avar != bvar)
                ss = fac * sb[idx[:-1]][keep]
                rows.extend((avar[keep], bvar[keep]))
                cols.extend((bvar[keep], avar[keep]))
                vals.extend((ss, ss))
                keep_same = (avar >= 0) & (avar == bvar)
                rows.append(avar[keep_same])
                cols.append(avar[keep_same])
                vals.append(2.0 * fac * sb[idx[:-1]][keep_same])
            mat = scipy.sparse.csc_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(nvar, nvar))
            try:
                sol = scipy.sparse.linalg.spsolve(mat, sub_rhs)
            except RuntimeError:
                continue
            if not np.all(np.isfinite(sol)):
                continue
            w_edges = np.where(live, sol[np.maximum(idvec, 0)], 0.0)
            w_u = np.zeros(n + 1)
            w_v = np.zeros(n + 1)
            w_u[1:n] = w_edges[:k]
            w_v[1:n] = w_edges[k:]
            du = np.diff(w_u) / dx
            dv = np.diff(w_v) / dx
            if np.dot(gu, du) + np.dot(gv, dv) < 0.0:
                return du, dv
        return None

    @staticmethod
    def free_cells(values: np.ndarray, want=None, forbid=None) -> np.ndarray:
        """Cells allowed to change: carrying mass, bordering the support, or
        wanted by the steepest feasible direction, minus explicit exclusions."""
        mask = values > 0.0
        grown = mask.copy()
        grown[:-1] |= mask[1:]
        grown[1:] |= mask[:-1]
        if want is not None:
            grown |= want
        if forbid is not None:
            grown &= ~forbid
        return grown


def _sanitize_density(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero out sub-1e-12 density cells and rescale to exact unit mass.

    The removed mass is below every tolerance in use, while the reciprocal
    masses of such cells would otherwise leak enormous transport
    sensitivities into the next step's warm start.
    """
    floor = 1e-12 / grid.length
    tiny = (values > 0.0) & (values <= floor)
    if not np.any(tiny):
        return values
    out = values.copy()
    out[tiny] = 0.0
    out /= grid.dx * np.sum(out)
    return out


def _feasible_fraction(u, du, v, dv) -> float:
    """Largest alpha in (0, 1] with (u, v) + alpha (du, dv) >= 0."""
    alpha = 1.0
    for x, d in ((u, du), (v, dv)):
        neg = d < 0.0
        if np.any(neg):
            alpha = min(alpha, float(np.min(x[neg] / -d[neg])))
    return max(alpha, 0.0)


def _solve_inner(problem: _StepProblem, u0, v0, cfg: JkoConfig):
    """Projected-descent loop; returns the best feasible pair seen.

    Each iteration first tries a Gauss-Newton direction built in cumulative
    mass coordinates (where the transport Hessian is tridiagonal), projected
    back onto the simplices; if that direction is unusable it falls back to a
    Barzilai-Borwein projected gradient step.  Both go through the same
    Armijo backtracking with a short nonmonotone reference window.
    """
    dx = problem.dx
    u, v = u0.copy(), v0.copy()
    f_val, w2f, w2g, e_val = problem.objective(u, v)
    if not np.isfinite(f_val):
        raise StepFailure("objective not finite at warm start")
    best = (f_val, u.copy(), v.copy(), w2f, w2g, e_val)
    gu, gv = problem.gradient(u, v)
    map_norm = problem.mapping_norm(u, v, gu, gv)
    if map_norm <= cfg.inner_tol * (1.0 + abs(f_val)):
        return best, 0, map_norm, "stationary_at_start"

    history = [f_val]
    step = 1.0
    stagnation = 0
    crawl = 0
    restarts = 2
    iters = 0
    reason = "max_iters"

    def backtrack(du, dv, f_ref):
        slope = float(np.dot(gu, du) + np.dot(gv, dv))
        if not slope < 0.0:
            return None
        lam = 1.0
        while lam > 1e-14:
            u_try = u + lam * du
            v_try = v + lam * dv
            f_try, a, b, e = problem.objective(u_try, v_try)
            if not np.isfinite(f_try):
                raise StepFailure("objective became non-finite during line search")
            if f_try <= f_ref + ARMIJO_PARAM * lam * slope:
                return u_try, v_try, f_try, a, b, e, lam
            lam *= cfg.step_shrink
        return None

    for iters in range(1, cfg.inner_max_iters + 1):
        f_ref = max(history[-LINESEARCH_MEMORY:])
        hit = None
        boundary_hit = False
        tc_u, tc_v = problem.steepest_feasible(u, v, gu, gv)
        fc_u = problem.free_cells(u, want=tc_u > 0.0)
        fc_v = problem.free_cells(v, want=tc_v > 0.0)
        for _ in range(4):
            newton = problem.newton_direction(u, v, gu, gv, fc_u, fc_v)
            if newton is None:
                break
            du_n, dv_n = newton
            # largest simplex-feasible step along the Newton direction; the
            # direction is mass-neutral, so the truncated step stays on the
            # simplex exactly and never needs a mass-smearing projection
            alpha = _feasible_fraction(u, du_n, v, dv_n)
            if alpha >= 1e-6:
                hit = backtrack(alpha * du_n, alpha * dv_n, f_ref)
                boundary_hit = alpha < 1.0
                break
            # cells strangling the step length get frozen and the direction
            # is recomputed; they rejoin the free set on later iterations
            strangle_u = (du_n < 0.0) & (u <= -1e-8 * du_n)
            strangle_v = (dv_n < 0.0) & (v <= -1e-8 * dv_n)
            if not (np.any(strangle_u) or np.any(strangle_v)):
                break
            fc_u &= ~strangle_u
            fc_v &= ~strangle_v
        if hit is None:
            du = project_unit_mass(u - step * gu, dx) - u
            dv = project_unit_mass(v - step * gv, dx) - v
            hit = backtrack(du, dv, f_ref)
            if hit is None:
                reason = "linesearch_floor"
                break

        u_try, v_try, f_try, w2f, w2g, e_val, _ = hit
        x_shift = np.concatenate((u_try - u, v_try - v))
        u, v = u_try, v_try
        prev_f = history[-1]
        history.append(f_try)
        if f_try < best[0]:
            best = (f_try, u.copy(), v.copy(), w2f, w2g, e_val)

        gu_new, gv_new = problem.gradient(u, v)
        g_shift = np.concatenate((gu_new - gu, gv_new - gv))
        gu, gv = gu_new, gv_new

        map_norm = problem.mapping_norm(u, v, gu, gv)
        if map_norm <= cfg.inner_tol * (1.0 + abs(f_try)):
            reason = "gradient_mapping"
            break
        small_gain = prev_f - f_try < cfg.inner_tol * max(1.0, abs(f_try))
        if small_gain and boundary_hit:
            # active-set walking: truncated steps are structural progress,
            # but cap how long they may go without improving the objective
            crawl += 1
            if crawl >= 12 * STAGNATION_WINDOW:
                reason = "active_set_crawl"
                break
        elif small_gain:
            stagnation += 1
            if stagnation >= STAGNATION_WINDOW:
                if restarts > 0:
                    # drop the nonmonotone reference and the step memory once
                    # before giving up; unsticks kink-crossing crawls
                    restarts -= 1
                    history = [f_try]
                    step = 1.0
                    stagnation = 0
                else:
                    reason = "stagnation"
                    break
        else:
            stagnation = 0
            crawl = 0

        curvature = float(np.dot(x_shift, g_shift))
        if curvature > 0.0:
            step = float(np.dot(x_shift, x_shift) / curvature)
        else:
            step *= cfg.step_grow
        step = min(max(step, BB_STEP_MIN), BB_STEP_MAX)

    return best, iters, map_norm, reason


def probe_basket(grid: Grid):
    """Smooth test functions for the Euler-Lagrange residual checks.

    All probes have vanishing slope at the walls.  With no-flux walls the
    admissible perturbation flows are tangential, so test functions with
    xi' != 0 at a wall would add a truncation (boundary) term to the
    identity as soon as the density reaches the wall, which it does whenever
    the data relaxes toward the flat steady state.  The basket keeps the
    curvature scales of the classical choices: a cubic with the constant-like
    second derivative of x^2, one full-period cosine, one interior bump.
    """
    x = grid.centers
    length = grid.length
    return [
        ("quadratic", GridField(grid, 3.0 * x**2 - 2.0 * x**3 / length)),
        ("cosine", GridField(grid, np.cos(2.0 * np.pi * x / length))),
        ("bump", GridField(grid, smooth_bump(x, 0.5 * length, 0.3 * length))),
    ]


def el_residual(prev: DensityPair, next_pair: DensityPair, p: ModelParams, xi: GridField,
                m: int | None = None, w2sq_f: float | None = None, w2sq_g: float | None = None):
    """Euler-Lagrange inequality sides for one step and one test function.

    lhs_f collects | integral (f - f0) xi + tau * integral [ lap(Af + Bg)
    d/dx(f xi') + f d/dx(af + bg) xi' ] | and rhs_f is
    ||xi''||_inf * W2^2(f, f0) / 2; analogously for g with lap(f + g) and the
    c-weighted gravity term.
    """
    grid = prev.grid
    dx = grid.dx
    f0, g0 = prev.f.values, prev.g.values
    f, g = next_pair.f.values, next_pair.g.values
    if w2sq_f is None or w2sq_g is None:
        from .transport import cdf, w2sq_from_cdfs

        w2sq_f = w2sq_from_cdfs(cdf(prev.f), cdf(next_pair.f), m)
        w2sq_g = w2sq_from_cdfs(cdf(prev.g), cdf(next_pair.g), m)

    xi1 = gradient_values(xi.values, dx)
    xi2 = gradient_values(xi1, dx)
    hess_inf = float(np.max(np.abs(xi2)))

    lap_cap_f = laplacian_values(p.A * f + p.B * g, dx)
    div_f = gradient_values(f * xi1, dx)
    grav_f = gradient_values(p.a * f + p.b * g, dx)
    lhs_f = abs(dx * np.sum((f - f0) * xi.values)
                + p.tau * dx * np.sum(lap_cap_f * div_f + f * grav_f * xi1))
    rhs_f = 0.5 * hess_inf * w2sq_f

    lap_cap_g = laplacian_values(f + g, dx)
    div_g = gradient_values(g * xi1, dx)
    grav_g = gradient_values(f + g, dx)
    lhs_g = abs(dx * np.sum((g - g0) * xi.values)
                + p.tau * dx * np.sum(lap_cap_g * div_g + p.c * g * grav_g * xi1))
    rhs_g = 0.5 * hess_inf * w2sq_g

    return float(lhs_f), float(rhs_f), float(lhs_g), float(rhs_g)


def flux_fields(pair: DensityPair, p: ModelParams, delta: float | None = None) -> FluxFields:
    """Velocity and flux fields of the pair, thresholded on the vacuum set.

    w_f = sqrt(f) * ( -(A f + B g)''' + (a f + b g)' ) where f > delta and 0
    elsewhere, j_f = sqrt(f) w_f; the g fields use (f+g)''' and c (f+g)'.
    """
    grid = pair.grid
    dx = grid.dx
    if delta is None:
        delta = 1e-6 / grid.length
    f, g = pair.f.values, pair.g.values

    force_f = -gradient_values(laplacian_values(p.A * f + p.B * g, dx), dx) \
        + gradient_values(p.a * f + p.b * g, dx)
    force_g = -gradient_values(laplacian_values(f + g, dx), dx) \
        + p.c * gradient_values(f + g, dx)

    sqrt_f = np.sqrt(f)
    sqrt_g = np.sqrt(g)
    w_f = np.where(f > delta, sqrt_f * force_f, 0.0)
    w_g = np.where(g > delta, sqrt_g * force_g, 0.0)
    return FluxFields(
        j_f=GridField(grid, sqrt_f * w_f),
        w_f=GridField(grid, w_f),
        j_g=GridField(grid, sqrt_g * w_g),
        w_g=GridField(grid, w_g),
    )


def step_entropy_estimate(prev: DensityPair, next_pair: DensityPair, p: ModelParams,
                          m: int | None = None):
    """Per-step entropy estimate: dissipation at the new pair against the
    entropy drop divided by tau.

    Returns (lhs, rhs, ok); ok applies the discretization slack.  For a < b
    the left side contains a negative term and the caller should treat the
    verdict as informational.
    """
    grid = prev.grid
    m = resolve_m(grid, m)
    lhs = dissipation_DH(next_pair.f, next_pair.g, p)
    rhs = (entropy(prev.f) - entropy(next_pair.f)
           + p.B * (entropy(prev.g) - entropy(next_pair.g))) / p.tau
    tol = disc_tolerance(grid, m, max(1.0, abs(lhs), abs(rhs)))
    return float(lhs), float(rhs), bool(lhs <= rhs + tol)


def jko_step(prev: DensityPair, p: ModelParams, cfg: JkoConfig,
             el_probes=None) -> tuple[DensityPair, StepReport]:
    """One minimizing-movement step; returns the new pair and its report."""
    problem = _StepProblem(prev, p, cfg)
    energy_before = energy(prev.f, prev.g, p)
    best, iters, map_norm, reason = _solve_inner(problem, prev.f.values, prev.g.values, cfg)
    f_val, u, v, w2sq_f, w2sq_g, energy_after = best

    grid = prev.grid
    if reason == "stationary_at_start":
        next_pair = prev
        w2sq_f = w2sq_g = 0.0
        energy_after = energy_before
        f_val = energy_before
    else:
        next_pair = DensityPair(
            GridField(grid, _sanitize_density(u, grid)),
            GridField(grid, _sanitize_density(v, grid)),
        )

    if el_probes is None:
        el_probes = probe_basket(grid)
    worst_f = None
    worst_g = None
    for _, xi in el_probes:
        lhs_f, rhs_f, lhs_g, rhs_g = el_residual(
            prev, next_pair, p, xi, m=problem.m, w2sq_f=w2sq_f, w2sq_g=w2sq_g)
        if worst_f is None or lhs_f - rhs_f > worst_f[0] - worst_f[1]:
            worst_f = (lhs_f, rhs_f)
        if worst_g is None or lhs_g - rhs_g > worst_g[0] - worst_g[1]:
            worst_g = (lhs_g, rhs_g)

    ent_lhs, ent_rhs, ent_ok = step_entropy_estimate(prev, next_pair, p, m=problem.m)
    report = StepReport(
        w2_f=float(np.sqrt(max(w2sq_f, 0.0))),
        w2_g=float(np.sqrt(max(w2sq_g, 0.0))),
        energy_before=energy_before,
        energy_after=energy_after,
        entropy_f=entropy(next_pair.f),
        entropy_g=entropy(next_pair.g),
        inner_iters=iters,
        el_residual_f=worst_f[0],
        el_bound_f=worst_f[1],
        el_residual_g=worst_g[0],
        el_bound_g=worst_g[1],
        entropy_estimate_ok=ent_ok,
        entropy_estimate_lhs=ent_lhs,
        entropy_estimate_rhs=ent_rhs,
        objective_value=f_val,
        grad_mapping_norm=map_norm,
        converged_by=reason,
    )
    return next_pair, report


@dataclass(frozen=True, eq=False)
class TrajectoryReport:
    """A minimizing-movement trajectory with its per-step reports.

    pairs[k] is the state after k steps (pairs[0] is the initial pair); the
    piecewise-constant interpolant equals pairs[k] on [k tau, (k+1) tau).
    """

    grid: Grid
    params: ModelParams
    cfg: JkoConfig
    pairs: list
    reports: list

    @property
    def tau(self) -> float:
        return self.params.tau

    @property
    def steps(self) -> int:
        return len(self.pairs) - 1

    def times(self) -> np.ndarray:
        return self.tau * np.arange(len(self.pairs))

    def eval_at(self, t: float) -> DensityPair:
        """Pair of the step whose interval [n tau, (n+1) tau) contains t."""
        idx = int(np.floor(t / self.tau + 1e-9))
        return self.pairs[min(max(idx, 0), self.steps)]


def run_trajectory(init: DensityPair, p: ModelParams, cfg: JkoConfig, steps: int) -> TrajectoryReport:
    if steps < 1:
        raise ConfigurationError("need at least one step")
    probes = probe_basket(init.grid)
    pairs = [init]
    reports = []
    current = init
    for _ in range(steps):
        current, report = jko_step(current, p, cfg, el_probes=probes)
        pairs.append(current)
        reports.append(report)
    return TrajectoryReport(init.grid, p, cfg, pairs, reports)
