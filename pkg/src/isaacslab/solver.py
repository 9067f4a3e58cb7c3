"""Monotone explicit scheme for the cutoff equations, marched backward in time.

The upper cutoff equation is ``u_t + max(H[u], P[u] - K) = 0`` and the lower
one ``u_t + min(H[u], -P[-u] + K) = 0``, both with Dirichlet data on the
parabolic boundary (terminal time plus lateral boundary). One step reads

    u^n = u^{n+1} + tau * G_h[u^{n+1}]

where ``G_h`` combines, per ``(alpha, beta)``, the seven-point diffusion
stencil (positive/negative cross-difference splitting), upwinded drift and the
exact finite max-min. The discrete ``P`` maximizes the same stencil over the
vertices of the polytope of diagonally dominant matrices with Gershgorin
discs inside ``[delta_bar, 1/delta_bar]``; in one dimension this is the closed
form Pucci operator.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    DiscretizationError,
    DomainError,
    StepSizeError,
    UnsupportedFormError,
    ValidationError,
)
from .grid import GridFunction, central_jets, format_float
from .operators import MixedIsaacs

__all__ = [
    "SchemeConfig",
    "SolveReport",
    "MonotoneScheme",
    "stencil_offsets",
    "stencil_weights",
    "gershgorin_vertices",
    "monotone_step",
    "solve_cutoff",
    "extremal_solution",
    "uniqueness_gap",
    "residual",
]

UPPER, LOWER = "upper", "lower"


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme parameters.

    ``safety`` scales the CFL bound when a step size is chosen automatically;
    a given step is only checked against the bound itself.
    """

    safety: float = 0.9
    max_steps: int = 5_000_000
    dominance_tol: float = 1e-12
    delta_bar: float = 0.25

    def __post_init__(self):
        if not 0 < self.safety <= 1:
            raise ValidationError("safety factor must lie in (0, 1]", field="safety")
        if self.dominance_tol < 0:
            raise ValidationError("dominance tolerance must be nonnegative", field="dominance_tol")
        if not 0 < self.delta_bar < 1:
            raise ValidationError("delta_bar must lie in (0, 1)", field="delta_bar")


@dataclass
class SolveReport:
    """Diagnostics of a solve or a K-ladder run."""

    tau: float
    cfl: float
    residual: float
    Ks: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    wall_clock: float = 0.0
    converged: bool = True
    steps: int = 0
    kind: str = "solve"

    def rows(self):
        out = []
        res = self.residuals or [self.residual] * len(self.Ks)
        for K, gap, r in zip(self.Ks, self.gaps, res):
            out.append((K, gap, r, self.tau, self.cfl))
        return out

    def to_csv(self, target):
        lines = ["K,gap,residual,tau,cfl"]
        lines += [",".join(format_float(v) for v in row) for row in self.rows()]
        text = "\n".join(lines) + "\n"
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)

    def as_dict(self):
        return dict(tau=self.tau, cfl=self.cfl, residual=self.residual, Ks=list(self.Ks),
                    gaps=list(self.gaps), converged=self.converged, steps=self.steps, kind=self.kind)


@lru_cache(maxsize=None)
def stencil_offsets(d):
    """Centre, then ``+-e_i``, then ``+-(e_i + e_j)`` and ``+-(e_i - e_j)`` for ``i < j``."""
    e = np.eye(d, dtype=int)
    offs = [np.zeros(d, dtype=int)]
    for i in range(d):
        offs += [e[i], -e[i]]
    for i, j in itertools.combinations(range(d), 2):
        offs += [e[i] + e[j], -e[i] - e[j], e[i] - e[j], -e[i] + e[j]]
    arr = np.array(offs)
    arr.setflags(write=False)
    return arr


def stencil_weights(a, b, c, h):
    """Weights of the monotone linear stencil, shape ``lead + (S,)``.

    ``a`` is ``lead + (d, d)``, ``b`` is ``lead + (d,)``, ``c`` is ``lead``.
    The weights sum to ``-c``; off-centre weights are nonnegative exactly when
    ``a`` is diagonally dominant.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[-1]
    lead = a.shape[:-2]
    S = len(stencil_offsets(d))
    W = np.zeros(lead + (S,))
    h2 = h * h
    absoff = np.abs(a) * (1 - np.eye(d))
    row_off = absoff.sum(axis=-1)
    bp = np.clip(b, 0, None)
    bm = np.clip(-np.asarray(b), 0, None)
    diag = np.diagonal(a, axis1=-2, axis2=-1)
    W[..., 0] = -2 * diag.sum(-1) / h2 + absoff.sum(axis=(-2, -1)) / h2 - np.abs(b).sum(-1) / h - c
    for i in range(d):
        side = (diag[..., i] - row_off[..., i]) / h2
        W[..., 1 + 2 * i] = side + bp[..., i] / h
        W[..., 2 + 2 * i] = side + bm[..., i] / h
    k = 1 + 2 * d
    for i, j in itertools.combinations(range(d), 2):
        aij = a[..., i, j]
        W[..., k] = W[..., k + 1] = np.clip(aij, 0, None) / h2
        W[..., k + 2] = W[..., k + 3] = np.clip(-aij, 0, None) / h2
        k += 4
    return W


@lru_cache(maxsize=None)
def gershgorin_vertices(d, delta_bar):
    """Vertices of ``{a : delta_bar <= a_ii -+ sum_j |a_ij| <= 1/delta_bar}``, per sign orthant.

    Returned as an array of matrices, shape ``(m, d, d)``. The stencil is
    linear in ``a`` within each orthant of the off-diagonal signs, so its
    maximum over the set is attained at one of these points.
    """
    lo, hi = delta_bar, 1.0 / delta_bar
    pairs = list(itertools.combinations(range(d), 2))
    nv = d + len(pairs)
    found = []
    for signs in itertools.product((1.0, -1.0), repeat=len(pairs)):
        # variables: diag a_ii, then m_ij = |a_ij| >= 0
        rows, rhs = [], []
        for i in range(d):
            inc = np.zeros(nv)
            inc[i] = 1
            for k, (p, q) in enumerate(pairs):
                if i in (p, q):
                    inc[d + k] = 1
            lower = inc.copy()
            lower[d:] *= -1  # a_ii - sum m >= lo  ->  -(a_ii - sum m) <= -lo
            rows.append(-lower)
            rhs.append(-lo)
            rows.append(inc)  # a_ii + sum m <= hi
            rhs.append(hi)
        for k in range(len(pairs)):
            r = np.zeros(nv)
            r[d + k] = -1
            rows.append(r)
            rhs.append(0.0)
        A = np.array(rows)
        bvec = np.array(rhs)
        for active in itertools.combinations(range(len(rows)), nv):
            sub = A[list(active)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            z = np.linalg.solve(sub, bvec[list(active)])
            if np.all(A @ z <= bvec + 1e-12):
                a = np.diag(z[:d])
                for k, (p, q) in enumerate(pairs):
                    a[p, q] = a[q, p] = signs[k] * z[d + k]
                found.append(a)
    uniq = np.unique(np.round(np.array(found), 14), axis=0)
    uniq.setflags(write=False)
    return uniq


def _parts(coeffs):
    if isinstance(coeffs, MixedIsaacs):
        return coeffs.branches()
    return coeffs.branches()


class MonotoneScheme:
    """Precomputed stencil data for one coefficient set on one grid.

    Raises
    ------
    UnsupportedFormError
        If some part has a non-affine lower-order hook (upwinding needs the
        drift explicitly).
    """

    def __init__(self, coeffs, grid, config=None):
        self.coeffs = coeffs
        self.grid = grid
        self.config = config or SchemeConfig()
        self.parts = _parts(coeffs)
        for _, part in self.parts:
            if not part.affine:
                raise UnsupportedFormError("the monotone scheme needs affine lower-order terms")
            if part.d != grid.d:
                raise ValidationError("coefficient dimension does not match the grid", field="d")
        d = grid.d
        self.offsets = stencil_offsets(d)
        shape = grid.space_shape
        strides = np.array([int(np.prod(shape[i + 1:])) for i in range(d)])
        self.interior_idx = np.nonzero(grid.interior)
        self.interior_flat = np.ravel_multi_index(self.interior_idx, shape)
        self.neighbours = self.interior_flat[None, :] + (self.offsets @ strides)[:, None]
        self.points = grid.points[grid.interior]
        self.boundary_mask = grid.boundary
        verts = gershgorin_vertices(d, float(self.config.delta_bar))
        zeros_b = np.zeros((len(verts), d))
        self.pucci_weights = stencil_weights(verts, zeros_b, np.zeros(len(verts)), grid.h)
        self.pucci_rate = float(np.max(-self.pucci_weights[:, 0]))
        self._cache = None
        self.autonomous = bool(coeffs.autonomous)

    def sample(self, t):
        """Per-part stencil weights, sources and mixture weights at time ``t``."""
        if self.autonomous and self._cache is not None:
            return self._cache
        out = []
        for wfield, part in self.parts:
            s = part.sample(t, self.points)
            self._check_dominance(s["a"], t)
            W = stencil_weights(s["a"], s["b"], s["c"], self.grid.h)  # (nA, nB, nI, S)
            W = np.moveaxis(W, -1, 2)  # (nA, nB, S, nI)
            F = np.array(s["f"])
            w = None if wfield is None else np.broadcast_to(
                np.asarray(wfield(t, self.points), dtype=float), (self.points.shape[0],))
            out.append((W, F, w))
        rate = max(float(np.max(-W[:, :, 0])) for W, _, _ in out)
        data = (out, max(rate, self.pucci_rate))
        if self.autonomous:
            self._cache = data
        return data

    def _check_dominance(self, a, t):
        tol = self.config.dominance_tol
        d = a.shape[-1]
        if d == 1:
            return
        off = (np.abs(a) * (1 - np.eye(d))).sum(-1)
        diag = np.diagonal(a, axis1=-2, axis2=-1)
        bad = diag - off < -tol * np.maximum(1.0, np.abs(diag))
        if bad.any():
            al, be, node = (int(v[0]) for v in np.nonzero(bad.any(-1)))
            x = tuple(self.points[node].tolist())
            raise DiscretizationError(
                f"diffusion of pair ({al}, {be}) is not diagonally dominant at t={t:g}, x={x}",
                node=(float(t),) + x, pair=(al, be))

    def cfl_bound(self, t=0.0):
        """Largest step keeping every stencil monotone at time ``t``."""
        _, rate = self.sample(t)
        return math.inf if rate <= 0 else 1.0 / rate

    def operator(self, u_flat, t, K, upper):
        """Discrete cutoff operator at interior nodes.

        ``u_flat`` is ``(batch, N)``; ``K`` and ``upper`` broadcast over the
        batch. Returns ``(values (batch, nI), rate)``.
        """
        parts, rate = self.sample(t)
        U = u_flat[:, self.neighbours]  # (batch, S, nI)
        H = 0.0
        for W, F, w in parts:
            L = np.einsum("abki,tki->tabi", W, U) + F[None]
            val = L.min(axis=2).max(axis=1)
            H = H + (val if w is None else w[None] * val)
        P = np.einsum("vk,tki->tvi", self.pucci_weights, U)
        K = np.asarray(K, dtype=float).reshape(-1, 1)
        upper = np.asarray(upper, dtype=bool).reshape(-1, 1)
        with np.errstate(invalid="ignore"):
            up = np.maximum(H, P.max(axis=1) - K)
            lo = np.minimum(H, P.min(axis=1) + K)
        return np.where(upper, up, lo), rate

    def step(self, u_next, t_next, K, upper):
        """One backward step on ``(batch,) + space_shape`` arrays; boundary left as is."""
        batch = u_next.shape[0]
        flat = u_next.reshape(batch, -1)
        G, rate = self.operator(flat, t_next, K, upper)
        tau = self.grid.tau
        if rate > 0 and tau > (1.0 / rate) * (1 + 1e-12):
            raise StepSizeError(f"time step {tau:.6g} exceeds the monotonicity bound {1.0 / rate:.6g}",
                                bound=1.0 / rate)
        out = flat.copy()
        out[:, self.interior_flat] = flat[:, self.interior_flat] + tau * G
        return out.reshape(u_next.shape)


def _boundary_values(g, grid):
    if isinstance(g, GridFunction):
        return np.array(g.values)
    if callable(g):
        return grid.sample(g)
    arr = np.asarray(g, dtype=float)
    if arr.shape[-grid.d - 1:] != grid.shape:
        raise ValidationError("boundary data does not match the grid", field="g")
    return arr


def _sign_flag(sign):
    if sign in (UPPER, "max", +1, True):
        return True
    if sign in (LOWER, "min", -1, False):
        return False
    raise ValidationError(f"unknown sign {sign!r}", field="sign")


def _march(scheme, gvals, Ks, uppers):
    """Solve a batch of cutoff problems; returns ``(solutions, cfl, residual)``.

    ``gvals`` is ``grid.shape`` or ``(batch,) + grid.shape``.
    """
    grid = scheme.grid
    batch = len(Ks)
    if grid.nt > scheme.config.max_steps:
        raise StepSizeError(f"{grid.nt} steps exceed max_steps={scheme.config.max_steps}")
    gvals = np.broadcast_to(gvals, (batch,) + grid.shape)
    out = np.zeros((batch,) + grid.shape)
    mask = grid.mask
    bnd = scheme.boundary_mask
    out[:, -1] = np.where(mask, gvals[:, -1], 0.0)
    times = grid.times
    cfl = math.inf
    resid = 0.0
    for n in range(grid.nt - 1, -1, -1):
        u_next = out[:, n + 1]
        cur = scheme.step(u_next, times[n + 1], Ks, uppers)
        cur = np.where(bnd, gvals[:, n], np.where(mask, cur, 0.0))
        out[:, n] = cur
        cfl = min(cfl, scheme.cfl_bound(times[n + 1]))
    # audit: re-evaluate the stencil on the stored solution
    flat = out.reshape(batch, grid.nt + 1, -1)
    scale = max(1.0, float(np.abs(out).max()))
    for n in range(grid.nt - 1, -1, -1, ):
        G, _ = scheme.operator(flat[:, n + 1], times[n + 1], Ks, uppers)
        idx = scheme.interior_flat
        r = flat[:, n + 1, idx] - flat[:, n, idx] + grid.tau * G
        resid = max(resid, float(np.abs(r).max(initial=0.0)) / scale)
    return out, cfl, resid


def _check_K(K):
    K = float(K)
    if not K >= 1:
        raise DomainError(f"K={K} must be at least 1", field="K")
    return K


def monotone_step(u_next, coeffs, grid, n, K, sign, config=None, boundary=None):
    """Advance one step from level ``n + 1`` to level ``n``.

    ``u_next`` holds the spatial values at level ``n + 1``; the result at
    level ``n`` keeps ``u_next`` (or ``boundary``, when given) on
    non-interior nodes.
    """
    scheme = MonotoneScheme(coeffs, grid, config)
    K = _check_K(K)
    u_next = np.asarray(u_next, dtype=float)[None]
    out = scheme.step(u_next, grid.times[n + 1], [K], [_sign_flag(sign)])[0]
    if boundary is not None:
        out = np.where(grid.boundary, boundary, out)
    return np.where(grid.mask, out, 0.0)


def solve_cutoff(coeffs, g, grid, K, sign=UPPER, config=None):
    """Solve one cutoff equation backward from ``t = T``.

    Returns
    -------
    (GridFunction, SolveReport)
    """
    start = time.perf_counter()
    K = _check_K(K)
    scheme = MonotoneScheme(coeffs, grid, config)
    gvals = _boundary_values(g, grid)
    sol, cfl, resid = _march(scheme, gvals, [K], [_sign_flag(sign)])
    report = SolveReport(grid.tau, cfl, resid, Ks=[K], gaps=[math.nan], residuals=[resid],
                         wall_clock=time.perf_counter() - start, steps=grid.nt, kind="solve")
    return GridFunction(grid, sol[0]), report


def _check_ladder(ladder):
    ladder = [float(K) for K in ladder]
    if not ladder:
        raise DomainError("K ladder is empty", field="ladder")
    if ladder[0] < 1:
        raise DomainError("K ladder must start at 1 or above", field="ladder")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise DomainError("K ladder must be strictly increasing", field="ladder")
    return ladder


def _sup_gap(a, b, grid):
    return float(np.abs(a - b)[..., grid.mask].max()) if a.ndim else abs(a - b)


def ladder_solutions(coeffs, g, grid, ladder, sides=(UPPER,), config=None):
    """All cutoff solutions for a ladder, as ``{side: array (len(ladder),) + grid.shape}``."""
    ladder = _check_ladder(ladder)
    scheme = MonotoneScheme(coeffs, grid, config)
    gvals = _boundary_values(g, grid)
    Ks = [K for _ in sides for K in ladder]
    ups = [_sign_flag(s) for s in sides for _ in ladder]
    sol, cfl, resid = _march(scheme, gvals, Ks, ups)
    m = len(ladder)
    return {s: sol[i * m:(i + 1) * m] for i, s in enumerate(sides)}, cfl, resid


def extremal_solution(coeffs, g, grid, ladder, tol, side="max", config=None):
    """Maximal (``side="max"``) or minimal solution via the cutoff ladder.

    Stops at the first ladder entry whose sup-distance to the previous one is
    below ``tol``. An exhausted ladder yields ``converged=False`` in the
    report, not an exception.
    """
    start = time.perf_counter()
    sign = UPPER if side in ("max", UPPER) else LOWER
    if side not in ("max", "min", UPPER, LOWER):
        raise ValidationError(f"side must be 'max' or 'min', got {side!r}", field="side")
    ladder = _check_ladder(ladder)
    sols, cfl, resid = ladder_solutions(coeffs, g, grid, ladder, (sign,), config)
    sols = sols[sign]
    gaps = [math.nan]
    stop = len(ladder) - 1
    converged = False
    for i in range(1, len(ladder)):
        gaps.append(_sup_gap(sols[i], sols[i - 1], grid))
        if gaps[-1] < tol:
            stop = i
            converged = True
            break
    report = SolveReport(grid.tau, cfl, resid, Ks=ladder[:stop + 1], gaps=gaps, residuals=[resid] * (stop + 1),
                         wall_clock=time.perf_counter() - start, converged=converged,
                         steps=grid.nt, kind=f"extremal-{side}")
    return GridFunction(grid, sols[stop]), report


@dataclass
class UniquenessResult:
    Ks: list
    gaps: list
    final_gap: float
    unique: bool
    upper: GridFunction
    lower: GridFunction
    report: SolveReport

    @property
    def curve(self):
        return list(zip(self.Ks, self.gaps))


def uniqueness_gap(coeffs, g, grid, ladder, tol, config=None):
    """``sup |u_K - u_{-K}|`` along the ladder; unique at tolerance if the last gap < tol."""
    start = time.perf_counter()
    ladder = _check_ladder(ladder)
    sols, cfl, resid = ladder_solutions(coeffs, g, grid, ladder, (UPPER, LOWER), config)
    gaps = [_sup_gap(sols[UPPER][i], sols[LOWER][i], grid) for i in range(len(ladder))]
    report = SolveReport(grid.tau, cfl, resid, Ks=ladder, gaps=gaps, residuals=[resid] * len(ladder),
                         wall_clock=time.perf_counter() - start, converged=gaps[-1] < tol,
                         steps=grid.nt, kind="uniqueness")
    return UniquenessResult(ladder, gaps, gaps[-1], gaps[-1] < tol,
                            GridFunction(grid, sols[UPPER][-1]), GridFunction(grid, sols[LOWER][-1]), report)


def residual(u, coeffs, scheme=None, K=math.inf, sign=UPPER):
    """Discrete equation defect at interior nodes, stored at level ``n < nt``.

    With ``scheme=None`` the defect is ``(u^{n+1} - u^n) / tau + H(t_{n+1},
    jet of u^{n+1})`` using central differences and the exact operator. With
    a :class:`MonotoneScheme` it is measured on the stepping stencil
    (including the cutoff at level ``K``), which the scheme's own output
    satisfies up to rounding.
    """
    grid = u.grid
    vals = u.values
    out = np.zeros(grid.shape)
    times = grid.times
    interior = grid.interior
    if scheme is None:
        grad, hess = central_jets(vals[1:], grid)
        t = times[1:].reshape((-1,) + (1,) * grid.d)
        t = np.broadcast_to(t, vals[1:].shape)
        x = np.broadcast_to(grid.points, vals[1:].shape + (grid.d,))
        sel = np.broadcast_to(interior, vals[1:].shape)
        H = coeffs.hamiltonian(vals[1:][sel], grad[sel], hess[sel], t[sel], x[sel])
        dt = (vals[1:] - vals[:-1]) / grid.tau
        body = np.zeros(vals[1:].shape)
        body[sel] = dt[sel] + H
        out[:-1] = body
    else:
        flat = vals.reshape(grid.nt + 1, -1)
        K = float(K)
        upper = _sign_flag(sign)
        for n in range(grid.nt):
            G, _ = scheme.operator(flat[n + 1][None], times[n + 1], [K], [upper])
            idx = scheme.interior_flat
            r = np.zeros(flat.shape[1])
            r[idx] = (flat[n + 1, idx] - flat[n, idx]) / grid.tau + G[0]
            out[n] = r.reshape(grid.space_shape)
    support = np.zeros(grid.shape, dtype=bool)
    support[:-1] = interior
    return GridFunction(grid, out, support)
