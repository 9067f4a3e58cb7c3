"""Quantitative comparison and stability diagnostics.

Contains the doubling-of-variables maximization, the mollification scale
schedule, a scalar inequality check and its sweep, power-law fitting of gap
curves, the mean oscillation of an operator over cylinders, the deviation
functional between operators, the stability ladder for mollified operators and
a discrete viscosity test with quadratic test functions.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DomainError, ResolutionError
from .grid import GridFunction, central_jets, holder_norm, shrink
from .mollify import mollify, mollify_operator
from .operators import IsaacsCoefficients, MixedIsaacs, TableField, gamma_of_kappa
from .solver import extremal_solution

__all__ = [
    "DoublingResult",
    "doubling_max",
    "epsilon_schedule",
    "penalty_bound_check",
    "penalty_bound_critical_alpha",
    "penalty_bound_sweep",
    "rate_fit",
    "gap_rate",
    "oscillation_theta",
    "probe_lattice",
    "lower_order_sampler",
    "deviation_delta",
    "mollified_coefficients",
    "StabilityReport",
    "stability_ladder",
    "ViscosityReport",
    "sample_interior_nodes",
    "viscosity_check",
]


@dataclass
class DoublingResult:
    """Maximizer of ``W(t, x, y)`` over same-time pairs of the shrunken window."""

    t: float
    x: tuple
    y: tuple
    value: float
    separation: float
    quotient: float
    M: float
    at_time_edge: bool
    at_space_edge: bool
    scanned: int


def doubling_max(u, v, eps, nu, K, kappa=1.2, M=None, time_stride=1, max_nodes=4096):
    """Exhaustive maximization of the doubled function.

    ``W(t, x, y) = [u - u_eps](t, x) - [v - u_eps](t, y) - nu K |x - y|^2`` with
    ``u_eps`` the mollification of ``u`` at scale ``eps``. Ties are broken
    towards the smallest separation. ``quotient`` is ``|x - y| nu K / M`` with
    ``M = max(1, holder_norm(u), holder_norm(v))`` unless given.
    """
    grid = u.grid
    if v.grid is not grid:
        raise DomainError("u and v must share the grid")
    ue = mollify(u, eps)
    window = ue.defined
    if M is None:
        M = max(1.0, holder_norm(u, kappa, max_nodes=max_nodes), holder_norm(v, kappa, max_nodes=max_nodes))
    A = u.values - ue.values
    B = v.values - ue.values
    pen = nu * K
    levels = np.flatnonzero(window.reshape(window.shape[0], -1).any(axis=1))[::time_stride]
    best = (-np.inf, np.inf, None)
    scanned = 0
    pts = grid.points
    for n in levels:
        sel = window[n]
        idx = np.argwhere(sel)
        X = pts[sel]
        a = A[n][sel]
        b = B[n][sel]
        d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
        W = a[:, None] - b[None, :] - pen * d2
        scanned += W.size
        wmax = W.max()
        if wmax < best[0]:
            continue
        cand = np.argwhere(W == wmax)
        k = cand[np.argmin(d2[cand[:, 0], cand[:, 1]])]
        sep2 = d2[k[0], k[1]]
        if wmax > best[0] or sep2 < best[1]:
            best = (float(wmax), float(sep2), (n, tuple(idx[k[0]]), tuple(idx[k[1]])))
    value, sep2, (n, ix, iy) = best
    sep = math.sqrt(sep2)
    x = tuple(grid.points[ix].tolist())
    y = tuple(grid.points[iy].tolist())

    def on_edge(i):
        # a neighbour outside the window means the maximizer sits on its rim
        for off in itertools.product((-1, 0, 1), repeat=grid.d):
            j = tuple(a + o for a, o in zip(i, off))
            if any(not 0 <= jj < s for jj, s in zip(j, grid.space_shape)) or not window[n][j]:
                return True
        return False

    return DoublingResult(
        t=float(grid.times[n]), x=x, y=y, value=value, separation=sep,
        quotient=sep * pen / M, M=float(M),
        at_time_edge=bool(n == levels[-1] or n == 0),
        at_space_edge=on_edge(ix) or on_edge(iy),
        scanned=int(scanned),
    )


def epsilon_schedule(eps0, M, K, kappa):
    """``eps0 M^{-1/(kappa-1)} K^{-(1-gamma)/(2 gamma)}`` with ``gamma = gamma_of_kappa(kappa)``.

    The K exponent equals ``(5 - kappa) / (14 - 6 kappa)``.
    """
    gamma = gamma_of_kappa(kappa)
    if not 0 < eps0 <= 1:
        raise DomainError("eps0 must lie in (0, 1]", field="eps0")
    if not M >= 1:
        raise DomainError("M must be at least 1", field="M")
    if not K >= 1:
        raise DomainError("K must be at least 1", field="K")
    return eps0 * M ** (-1.0 / (kappa - 1)) * K ** (-(1 - gamma) / (2 * gamma))


def _penalty_bound_terms(beta, alpha, nu, delta):
    beta, alpha, nu, delta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (beta, alpha, nu, delta)))
    if np.any(beta < 0) or np.any(beta > delta / 2 * (1 + 1e-15)):
        raise DomainError("beta must lie in [0, delta/2]", field="beta")
    if np.any(alpha < -4 * nu + 1e-9):
        raise DomainError("alpha too close to the pole at -4 nu", field="alpha")
    lhs = beta * alpha - delta * alpha**2 / (alpha + 4 * nu)
    rhs = 2 * (nu / delta) * beta**2
    return lhs, rhs


def penalty_bound_check(beta, alpha, nu, delta):
    """``(lhs, rhs, passed)`` for ``beta alpha - delta alpha^2 / (alpha + 4 nu) <= 2 (nu / delta) beta^2``."""
    lhs, rhs = _penalty_bound_terms(beta, alpha, nu, delta)
    lhs, rhs = float(lhs), float(rhs)
    return lhs, rhs, lhs <= rhs + 1e-12


def penalty_bound_critical_alpha(beta, nu, delta):
    """Maximizer in ``alpha`` of the left-hand side: ``4 nu (sqrt(delta / (delta - beta)) - 1)``."""
    return 4 * nu * (math.sqrt(delta / (delta - beta)) - 1)


@dataclass
class SweepResult:
    beta: np.ndarray
    alpha: np.ndarray
    nu: np.ndarray
    delta: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def passed(self):
        return self.lhs <= self.rhs + 1e-12 * np.maximum(1.0, np.abs(self.lhs))

    @property
    def violations(self):
        return int((~self.passed).sum())

    @property
    def count(self):
        return int(self.lhs.size)

    @property
    def worst(self):
        return float((self.lhs - self.rhs).max())

    def rows(self):
        for vals in zip(self.beta, self.alpha, self.nu, self.delta, self.lhs, self.rhs, self.passed):
            yield vals


def penalty_bound_sweep(nus=(0.1, 0.25, 0.5), deltas=(0.5, 1.0), n_beta=41, n_alpha=1300, alpha_max=1e3):
    """Dense sweep over ``beta in [0, delta/2]`` and log-spaced ``alpha + 4 nu``.

    The critical ``alpha`` of each ``beta`` is added to the grid so the sweep
    contains the worst case.
    """
    rows = []
    for nu, delta in itertools.product(nus, deltas):
        betas = np.linspace(0.0, delta / 2, n_beta)
        shift = np.geomspace(1e-6, alpha_max + 4 * nu, n_alpha)
        alphas = -4 * nu + shift
        for beta in betas:
            al = np.append(alphas, penalty_bound_critical_alpha(beta, nu, delta))
            rows.append(np.stack([np.full(al.size, beta), al, np.full(al.size, nu), np.full(al.size, delta)], -1))
    data = np.concatenate(rows)
    lhs, rhs = _penalty_bound_terms(data[:, 0], data[:, 1], data[:, 2], data[:, 3])
    return SweepResult(data[:, 0], data[:, 1], data[:, 2], data[:, 3], lhs, rhs)


def rate_fit(gaps):
    """Least-squares decay exponent of ``(K, gap)`` pairs on log-log axes.

    Returns ``(p, r2)`` with ``gap ~ C K^{-p}``; constant data gives ``r2 = 1``.
    """
    arr = np.asarray(list(gaps), dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3:
        raise DomainError("rate fit needs at least three (K, gap) pairs")
    if np.any(arr[:, 1] <= 0) or np.any(arr[:, 0] <= 0):
        raise DomainError("rate fit needs positive K and gaps")
    x = np.log(arr[:, 0])
    y = np.log(arr[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float((resid**2).sum())
    r2 = 1.0 if ss_tot <= 1e-30 else 1.0 - ss_res / ss_tot
    return float(-slope), float(r2)


def gap_rate(curve, floor=0.0):
    """:func:`rate_fit` on the entries with ``gap > floor``.

    Once the cutoff is inactive everywhere the gap is zero to rounding; such
    entries carry no rate information and are dropped.
    """
    kept = [(K, g) for K, g in curve if g > floor]
    return rate_fit(kept), len(kept)


def oscillation_theta(F, R, grid, probes, max_centers=None):
    """Worst mean oscillation of ``F`` over cylinders ``[t, t + R^2) x B_R(x)``.

    ``F(X, t, x)`` takes one probe matrix and grid-shaped ``t``, ``x`` arrays.
    For each cylinder the spatial mean over ``B_R(x)`` is subtracted at every
    time level and the absolute deviation averaged over the cylinder nodes.
    Centres are the nodes of ``shrink(grid, R)``.
    """
    if R < 2 * grid.h * (1 - 1e-12):
        raise ResolutionError(f"R={R} is below twice the mesh size", field="R")
    probes = [np.atleast_2d(np.asarray(P, dtype=float)) for P in probes]
    if not probes:
        raise DomainError("no probes")
    for P in probes:
        if abs(np.linalg.norm(P) - 1) > 1e-9:
            raise DomainError("probe matrices must have unit Frobenius norm")
    centers = shrink(grid, R).mask
    if not centers.any():
        raise DomainError("no cylinder fits in the domain", field="R")
    r = int(math.floor(R / grid.h * (1 - 1e-12)))
    axis = np.arange(-r, r + 1)
    offs = np.stack(np.meshgrid(*([axis] * grid.d), indexing="ij"), -1).reshape(-1, grid.d)
    offs = offs[np.linalg.norm(offs * grid.h, axis=-1) < R]
    m = int(math.ceil(R**2 / grid.tau - 1e-9))  # levels t, ..., t + (m-1) tau < t + R^2
    m = max(m, 1)
    t = np.broadcast_to(grid.times.reshape((-1,) + (1,) * grid.d), grid.shape)
    x = np.broadcast_to(grid.points, grid.shape + (grid.d,))
    cidx = np.argwhere(centers)
    if max_centers is not None and len(cidx) > max_centers:
        cidx = cidx[np.linspace(0, len(cidx) - 1, max_centers).round().astype(int)]
    worst = 0.0
    for P in probes:
        vals = np.asarray(F(P, t, x), dtype=float)
        vals = np.broadcast_to(vals, grid.shape)
        nbr = [np.asarray(vals[(slice(None),) + tuple(
            np.clip(cidx[:, 1 + i] + o[i], 0, grid.space_shape[i] - 1) for i in range(grid.d))])
            for o in offs]
        stack = np.stack(nbr, 0)  # (ball, nt+1, centers)
        ball_mean = stack.mean(axis=0)  # (nt+1, centers)
        dev = np.abs(stack - ball_mean[None]).mean(axis=0)
        csum = np.concatenate([np.zeros((1, dev.shape[1])), np.cumsum(dev, axis=0)])
        n0 = cidx[:, 0]
        theta = (csum[n0 + m, np.arange(len(n0))] - csum[n0, np.arange(len(n0))]) / m
        worst = max(worst, float(theta.max()))
    return worst


def probe_lattice(dim, M, spacing):
    """Lattice points ``k * spacing`` with Euclidean norm ``<= M``.

    The lattice does not depend on ``M``, so probe sets are nested in ``M``.
    """
    if spacing <= 0:
        raise DomainError("probe spacing must be positive")
    kmax = int(math.floor(M / spacing + 1e-12))
    axis = spacing * np.arange(-kmax, kmax + 1)
    pts = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), -1).reshape(-1, dim)
    return pts[np.linalg.norm(pts, axis=-1) <= M * (1 + 1e-12)]


def lower_order_sampler(coeffs):
    """``(xi, u', t, x) -> max_a min_b [xi^{ab} + b^{ab}(u', t, x)]``, summed over mixture parts.

    ``xi`` is ``(P, nA, nB)`` and ``u'`` is ``(P, d + 1)``; the result has shape
    ``(P,) + batch``.
    """
    branches = coeffs.branches()

    def sampler(xi, up, t, x):
        xi = np.asarray(xi, dtype=float)
        up = np.asarray(up, dtype=float)
        total = 0.0
        for w, part in branches:
            s = part.sample(t, x)
            nb = s["c"].ndim - 2
            ex = (slice(None),) * 3 + (None,) * nb
            b = s["b"]
            bp = np.einsum("ab...i,pi->pab...", b, up[:, 1:])
            low = xi[ex] + bp - s["c"][None] * up[(slice(None), 0, None, None) + (None,) * nb] + s["f"][None]
            val = low.min(axis=2).max(axis=1)
            if w is not None:
                val = val * np.asarray(w(t, x), dtype=float)[None]
            total = total + val
        return total

    return sampler


@dataclass
class DeviationResult:
    values: GridFunction
    norm: float
    probes: int


def deviation_delta(Hn, H0, M, grid, spacing=None, xi_shape=(1, 1), time_stride=1, probes=None):
    """Nodewise ``sup |Hn - H0|`` over probes ``|xi| <= M``, ``|u'| <= M`` and its L_{d+1} norm.

    Probes come from :func:`probe_lattice` (a product of a lattice for ``xi``
    and one for ``u'``) unless given as a ``(xi, u')`` pair of arrays. Only
    every ``time_stride``-th level enters; skipped levels are zero in the
    returned grid function and the norm weights each kept level by
    ``time_stride * tau``.
    """
    if probes is None:
        if spacing is None:
            spacing = M
        nxi = int(np.prod(xi_shape))
        xs = probe_lattice(nxi, M, spacing)
        us = probe_lattice(grid.d + 1, M, spacing)
        xi = np.repeat(xs, len(us), axis=0).reshape((-1,) + tuple(xi_shape))
        up = np.tile(us, (len(xs), 1))
    else:
        xi, up = (np.asarray(p, dtype=float) for p in probes)
    if len(xi) == 0:
        raise DomainError("empty probe set")
    levels = np.arange(0, grid.nt + 1, time_stride)
    t = grid.times[levels].reshape((-1,) + (1,) * grid.d)
    x = grid.points[None]
    out = np.zeros(grid.shape)
    chunk = max(1, 200_000 // (levels.size * int(np.prod(grid.space_shape))))
    dev = np.zeros((levels.size,) + grid.space_shape)
    for s in range(0, len(xi), chunk):
        a = Hn(xi[s:s + chunk], up[s:s + chunk], t, x)
        b = H0(xi[s:s + chunk], up[s:s + chunk], t, x)
        dev = np.maximum(dev, np.abs(np.asarray(a) - np.asarray(b)).max(axis=0))
    dev = np.where(grid.mask, dev, 0.0)
    out[levels] = dev
    vol = grid.tau * time_stride * grid.h**grid.d
    p = grid.d + 1
    norm = float((vol * (dev[:, grid.mask] ** p).sum()) ** (1.0 / p))
    support = np.zeros(grid.shape, dtype=bool)
    support[levels] = True
    return DeviationResult(GridFunction(grid, out, support), norm, int(len(xi)))


def mollified_coefficients(coeffs, grid, n, regimes=None):
    """Lower-order part mollified at scale ``1 / n``.

    With ``regimes`` (a list of ``(indicator, part)``) the regime indicators
    are mollified, which is exact for regime-wise constant lower-order terms.
    Otherwise the drift, discount and source tables are mollified one by one.
    """
    if regimes:
        weights = [TableField(grid, mollify_operator(ind, grid, n), index_ndim=0) for ind, _ in regimes]
        return MixedIsaacs([p for _, p in regimes], weights)
    if isinstance(coeffs, MixedIsaacs):
        parts = [mollified_coefficients(p, grid, n) for p in coeffs.parts]
        weights = [TableField(grid, mollify_operator(w, grid, n), index_ndim=0) for w in coeffs.weights]
        return MixedIsaacs(parts, weights)

    def table(fld):
        t = grid.times.reshape((-1,) + (1,) * grid.d)
        vals = np.asarray(fld(t, grid.points[None]))
        # move the grid axes next to the index axes: (nA, nB) + grid.shape + trailing
        return vals

    b = table(coeffs.b)
    bt = np.moveaxis(b, -1, 2)  # (nA, nB, d) + grid.shape
    bm = np.moveaxis(mollify_operator(bt, grid, n), 2, -1)
    return IsaacsCoefficients(
        coeffs.a,
        TableField(grid, bm),
        TableField(grid, mollify_operator(table(coeffs.c), grid, n)),
        TableField(grid, mollify_operator(table(coeffs.f), grid, n)),
        K0=coeffs.K0,
        Hbar=coeffs.Hbar,
    )


@dataclass
class StabilityReport:
    ns: list
    deviations: list
    base_deviations: list
    delta_norms: list
    converged: list
    slack: float = 0.1
    solutions: dict = field(default_factory=dict, repr=False)

    @staticmethod
    def _decreasing(vals, slack):
        return all(b <= (1 + slack) * a for a, b in zip(vals, vals[1:]))

    @property
    def deviations_decrease(self):
        # the last entry is the reference itself
        return self._decreasing(self.deviations[:-1], self.slack)

    @property
    def delta_decreases(self):
        return self._decreasing(self.delta_norms, self.slack)

    @property
    def passed(self):
        return self.deviations_decrease and self.delta_decreases

    def rows(self):
        return list(zip(self.ns, self.deviations, self.base_deviations, self.delta_norms))


def stability_ladder(coeffs, g, grid, ns, ladder, tol, regimes=None, M=2.0, spacing=None,
                     time_stride=None, config=None, g_n=None, side="max", slack=0.1):
    """Extremal solutions for mollified operators along ``ns``.

    Reports ``sup|v_n - v_{n_max}|``, ``sup|v_n - v_0|`` (``v_0`` from the
    unmollified coefficients) and the L_{d+1} norm of the operator deviation.
    ``g_n`` optionally maps ``n`` to boundary data for ``v_n``.
    """
    ns = [int(n) for n in ns]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise DomainError("n ladder must be increasing", field="n_ladder")
    if time_stride is None:
        time_stride = max(1, grid.nt // 64)
    base, _ = extremal_solution(coeffs, g, grid, ladder, tol, side, config)
    H0 = lower_order_sampler(coeffs)
    parts = coeffs.parts if isinstance(coeffs, MixedIsaacs) else (coeffs,)
    xi_shape = parts[0].index_shape
    sols, conv, norms = {}, [], []
    for n in ns:
        cn = mollified_coefficients(coeffs, grid, n, regimes)
        data = g_n(n) if g_n is not None else g
        v, rep = extremal_solution(cn, data, grid, ladder, tol, side, config)
        sols[n] = v.values
        conv.append(rep.converged)
        dev = deviation_delta(lower_order_sampler(cn), H0, M, grid, spacing=spacing,
                              xi_shape=xi_shape, time_stride=time_stride)
        norms.append(dev.norm)
    last = sols[ns[-1]]
    mask = grid.full_mask
    devs = [float(np.abs(sols[n] - last)[mask].max()) for n in ns]
    base_devs = [float(np.abs(sols[n] - base.values)[mask].max()) for n in ns]
    sols[0] = base.values
    return StabilityReport(ns, devs, base_devs, norms, conv, slack, sols)


@dataclass
class ViscosityReport:
    nodes: list
    sub_defects: list
    super_defects: list
    tolerances: list
    skipped: list
    radii: list

    @property
    def sub_passed(self):
        return all(d >= -tol for d, tol in zip(self.sub_defects, self.tolerances) if d is not None)

    @property
    def super_passed(self):
        return all(d <= tol for d, tol in zip(self.super_defects, self.tolerances) if d is not None)

    @property
    def passed(self):
        return self.sub_passed and self.super_passed

    def rows(self):
        return list(zip(self.nodes, self.radii, self.sub_defects, self.super_defects, self.tolerances))


def _cylinder(grid, node, r):
    n = node[0]
    x0 = grid.points[tuple(node[1:])]
    m = int(math.ceil(r**2 / grid.tau - 1e-9))
    levels = np.arange(n, min(n + m, grid.nt + 1))
    ball = grid.mask & (np.linalg.norm(grid.points - x0, axis=-1) < r)
    return levels, ball


def sample_interior_nodes(grid, rng, count, margin_levels):
    """``count`` random interior nodes at least ``margin_levels`` steps before the final time."""
    idx = np.argwhere(grid.interior)
    last = max(1, grid.nt - margin_levels)
    ns = rng.integers(0, last, count)
    picks = rng.integers(0, len(idx), count)
    return [(int(n),) + tuple(int(v) for v in idx[k]) for n, k in zip(ns, picks)]


def viscosity_check(u, coeffs, nodes, radii, eps_probe=1e-8, C=10.0, kappa=1.2,
                    multipliers=(0.5, 1.0, 2.0), eps_cap=np.inf):
    """Discrete viscosity test with quadratic test functions.

    At each node ``(t0, x0)`` the candidates are
    ``phi = u0 + p.(x - x0) + (x - x0)^T X (x - x0) / 2 + q (t - t0)`` with
    every component of the discrete jet ``(p, X, q)`` scaled by one of the
    ``multipliers``. For the subsolution side the smallest ``e >= 0`` is
    found such that ``u - phi - e(|x - x0|^2 + t - t0)`` has its maximum over
    ``C_r = [t0, t0 + r^2) x B_r(x0)`` at the centre, ``e`` is increased by
    ``eps_probe`` and ``q + e + H(u0, p, X + 2eI)`` must be ``>= -tol``. The
    supersolution side is the mirror image. ``tol = C (h^2 / r^2 +
    r^(kappa-1))``. Candidates needing ``e > eps_cap`` are inadmissible; nodes
    without admissible candidates are reported as skipped.
    """
    grid = u.grid
    d = grid.d
    vals = u.values
    grad, hess = central_jets(vals, grid)
    iu = np.triu_indices(d)
    sub_d, sup_d, tols, skipped, used_nodes, used_r = [], [], [], [], [], []
    for node in nodes:
        node = tuple(int(v) for v in node)
        n, idx = node[0], node[1:]
        if n >= grid.nt or not grid.interior[idx]:
            raise DomainError(f"node {node} is not an interior node before the final time")
        t0 = grid.times[n]
        x0 = grid.points[idx]
        u0 = vals[node]
        p0 = grad[node]
        X0 = hess[node]
        q0 = (vals[(n + 1,) + idx] - u0) / grid.tau
        for r in radii:
            levels, ball = _cylinder(grid, node, r)
            dt = grid.times[levels] - t0
            dx = grid.points[ball] - x0
            uc = vals[levels][:, ball]
            dist2 = (dx**2).sum(-1)
            weight = dist2[None, :] + dt[:, None]
            centre = weight == 0
            comps = [*p0, *X0[iu], q0]
            best_sub, best_sup = np.inf, -np.inf
            admissible = False
            for mult in itertools.product(multipliers, repeat=len(comps)):
                c = np.array(comps) * np.array(mult)
                p = c[:d]
                X = np.zeros((d, d))
                X[iu] = c[d:-1]
                X = X + np.triu(X, 1).T
                q = c[-1]
                phi = u0 + dx @ p + 0.5 * np.einsum("ki,ij,kj->k", dx, X, dx)
                diff = uc - phi[None, :] - q * dt[:, None]
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(centre, -np.inf, diff / np.where(centre, 1.0, weight))
                e_sub = max(0.0, float(ratio.max())) + eps_probe
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio_m = np.where(centre, -np.inf, -diff / np.where(centre, 1.0, weight))
                e_sup = max(0.0, float(ratio_m.max())) + eps_probe
                eye = np.eye(d)
                if e_sub <= eps_cap:
                    admissible = True
                    val = q + e_sub + float(coeffs.hamiltonian(u0, p, X + 2 * e_sub * eye, t0, x0))
                    best_sub = min(best_sub, val)
                if e_sup <= eps_cap:
                    admissible = True
                    val = q - e_sup + float(coeffs.hamiltonian(u0, p, X - 2 * e_sup * eye, t0, x0))
                    best_sup = max(best_sup, val)
            tol = C * (grid.h**2 / r**2 + r ** (kappa - 1))
            used_nodes.append(node)
            used_r.append(float(r))
            tols.append(tol)
            skipped.append(not admissible)
            sub_d.append(None if best_sub == np.inf else best_sub)
            sup_d.append(None if best_sup == -np.inf else best_sup)
    return ViscosityReport(used_nodes, sub_d, sup_d, tols, skipped, used_r)
