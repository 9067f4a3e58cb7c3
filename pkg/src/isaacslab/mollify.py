"""Space-time mollification of grid functions and coefficient fields.

The kernel is the separable bump

    zeta(t, x) = C exp(1 / ((2t + 1)^2 - 1)) exp(1 / (|x|^2 - 1))

on ``(-1, 0) x B_1``. Grid functions are smoothed with the parabolic scaling
``eps^{-d-2} zeta(t / eps^2, x / eps)``, coefficient fields with the isotropic
scaling ``n^{d+1} zeta(n t, n x)``. Since the time support is negative, the
value at time ``t`` averages over ``(t, t + eps^2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, ndimage, signal

from .errors import DomainError, ResolutionError
from .grid import GridFunction, holder_norm, masked_gradient, shrink

__all__ = [
    "MollifierKernel",
    "DiscreteKernel",
    "mollify",
    "mollify_operator",
    "MollifierEstimates",
    "check_mollifier_estimates",
]

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(12)
_SPHERE = {1: 2.0, 2: 2 * math.pi, 3: 4 * math.pi}


def _time_profile(s):
    """Unnormalized time factor on (-1, 0)."""
    s = np.asarray(s, dtype=float)
    q = (2 * s + 1) ** 2 - 1
    out = np.zeros_like(s)
    inside = q < 0
    out[inside] = np.exp(1.0 / q[inside])
    return out


def _radial_profile(r):
    """Unnormalized space factor on [0, 1)."""
    r = np.asarray(r, dtype=float)
    q = r**2 - 1
    out = np.zeros_like(r)
    inside = q < 0
    out[inside] = np.exp(1.0 / q[inside])
    return out


class MollifierKernel:
    """Normalized bump on ``(-1, 0) x B_1`` in dimension ``d``."""

    def __init__(self, d):
        if d not in _SPHERE:
            raise DomainError("dimension must be 1, 2 or 3", field="d")
        self.d = d
        kw = dict(epsabs=1e-15, epsrel=1e-13, limit=200)
        self.time_mass = integrate.quad(lambda s: float(_time_profile(s)), -1, 0, **kw)[0]
        self.space_mass = _SPHERE[d] * integrate.quad(
            lambda r: float(_radial_profile(r)) * r ** (d - 1), 0, 1, **kw)[0]
        self.space_second = _SPHERE[d] * integrate.quad(
            lambda r: float(_radial_profile(r)) * r ** (d + 1), 0, 1, **kw)[0]
        self.C = 1.0 / (self.time_mass * self.space_mass)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.C * _time_profile(t) * _radial_profile(np.linalg.norm(x, axis=-1))

    def parabolic(self, t, x, eps):
        """``eps^{-d-2} zeta(t / eps^2, x / eps)``."""
        return eps ** (-self.d - 2) * self(np.asarray(t) / eps**2, np.asarray(x) / eps)

    def isotropic(self, t, x, n):
        """``n^{d+1} zeta(n t, n x)``."""
        return n ** (self.d + 1) * self(n * np.asarray(t), n * np.asarray(x))

    def second_moment(self, eps):
        """``int |y|^2 zeta_eps(s, y) ds dy`` for the parabolic scaling."""
        return eps**2 * self.space_second / self.space_mass

    def discrete(self, grid, time_scale, space_scale):
        """Quadrature weights on ``grid`` for a kernel of the given extents."""
        return DiscreteKernel.build(self, grid, time_scale, space_scale)


@dataclass(frozen=True)
class DiscreteKernel:
    """Separable lattice weights, each factor normalized to unit sum.

    ``time[k]`` weighs the value ``k`` steps later; ``space`` is a
    ``(2r+1)^d`` stencil centred on the node. ``raw_mass`` is the
    unnormalized quadrature of the continuous kernel, a consistency check.
    """

    time: np.ndarray
    space: np.ndarray
    raw_mass: float
    offsets: np.ndarray = field(repr=False)

    @property
    def radius(self):
        return (self.space.shape[0] - 1) // 2

    @property
    def weights(self):
        return self.time.reshape((-1,) + (1,) * self.space.ndim) * self.space[None]

    @property
    def spatial_second_moment(self):
        return float((self.space * (self.offsets**2).sum(-1)).sum())

    @classmethod
    def build(cls, kernel, grid, time_scale, space_scale):
        tau, h, d = grid.tau, grid.h, grid.d
        kmax = int(math.floor(time_scale / tau + 0.5))
        ks = np.arange(kmax + 1)
        lo = np.clip((ks - 0.5) * tau, 0.0, time_scale)
        hi = np.clip((ks + 0.5) * tau, 0.0, time_scale)
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        sig = mid[:, None] + half[:, None] * _GAUSS_X[None, :]
        cell = (half[:, None] * _GAUSS_W[None, :] * _time_profile(-sig / time_scale)).sum(axis=1)
        cell /= time_scale
        keep = np.flatnonzero(cell > 0)
        cell = cell[: keep[-1] + 1] if keep.size else np.array([1.0])
        r = int(math.floor(space_scale / h * (1 - 1e-12)))
        axis = np.arange(-r, r + 1) * h
        offsets = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)
        space = _radial_profile(np.linalg.norm(offsets, axis=-1) / space_scale)
        raw = kernel.C * cell.sum() * space.sum() * (h / space_scale) ** d
        return cls(cell / cell.sum(), space / space.sum(), float(raw), offsets)


def _time_correlate(arr, weights):
    """``out[n] = sum_k w[k] arr[n + k]`` (valid part) along axis 0."""
    w = weights.reshape((-1,) + (1,) * (arr.ndim - 1))
    if weights.size <= 64:
        n_out = arr.shape[0] - weights.size + 1
        out = np.zeros((n_out,) + arr.shape[1:])
        for k, wk in enumerate(weights):
            out += wk * arr[k:k + n_out]
        return out
    return signal.fftconvolve(arr, w[::-1], mode="valid", axes=0)


def _space_correlate(arr, stencil, lead):
    """Valid spatial correlation over the trailing ``stencil.ndim`` axes."""
    full = stencil.reshape((1,) * lead + stencil.shape)
    out = ndimage.correlate(arr, full, mode="constant", cval=0.0)
    r = (stencil.shape[0] - 1) // 2
    sl = (slice(None),) * lead + (slice(r, -r if r else None),) * stencil.ndim
    return out[sl]


def _local_range(arr, nk, stencil, lead):
    """Min and max of ``arr`` over the product footprint, aligned like the correlations."""
    ax = lead - 1
    keep = [slice(None)] * arr.ndim
    keep[ax] = slice(nk // 2, nk // 2 + arr.shape[ax] - nk + 1)
    keep = tuple(keep)
    tmin = ndimage.minimum_filter1d(arr, nk, axis=ax, mode="nearest")[keep]
    tmax = ndimage.maximum_filter1d(arr, nk, axis=ax, mode="nearest")[keep]
    fp = (stencil > 0).reshape((1,) * lead + stencil.shape)
    smin = ndimage.minimum_filter(tmin, footprint=fp, mode="nearest")
    smax = ndimage.maximum_filter(tmax, footprint=fp, mode="nearest")
    r = (stencil.shape[0] - 1) // 2
    sl = (slice(None),) * lead + (slice(r, -r if r else None),) * stencil.ndim
    return smin[sl], smax[sl]


def _convolve(padded, dk, lead):
    """Apply the separable kernel to a padded array; ``lead`` counts axes before space."""
    moved = np.moveaxis(padded, lead - 1, 0)
    tpass = np.moveaxis(_time_correlate(moved, dk.time), 0, lead - 1)
    out = _space_correlate(tpass, dk.space, lead)
    lo, hi = _local_range(padded, dk.time.size, dk.space, lead)
    # the result is a convex combination; clipping removes rounding drift
    return np.clip(out, lo, hi)


def mollify(u, eps, kernel=None):
    """Parabolic mollification of ``u`` at scale ``eps``.

    The result is supported on ``shrink(grid, eps)``; everything needed there
    lies inside the domain, so no extension is used.

    Raises
    ------
    ResolutionError
        If ``eps < 2h``.
    DomainError
        If the shrunken window is empty.
    """
    grid = u.grid
    if eps < 2 * grid.h * (1 - 1e-12):
        raise ResolutionError(f"eps={eps} is below twice the mesh size {grid.h}", field="eps")
    window = shrink(grid, eps)
    if window.empty:
        raise DomainError(f"the window shrunk by eps={eps} is empty", field="eps")
    kernel = kernel or MollifierKernel(grid.d)
    dk = kernel.discrete(grid, eps**2, eps)
    vals = np.where(u.defined, u.values, 0.0)
    r = dk.radius
    nk = dk.time.size
    padded = np.pad(vals, [(0, nk - 1)] + [(r, r)] * grid.d, mode="edge")
    out = _convolve(padded, dk, 1)
    support = window.mask if u.support is None else window.mask & _supported(u, dk)
    return GridFunction(grid, np.where(support, out, 0.0), support)


def _supported(u, dk):
    """Nodes whose full stencil lies inside the support of ``u``."""
    nk = dk.time.size
    r = dk.radius
    bad = np.pad(~u.defined, [(0, nk - 1)] + [(r, r)] * u.grid.d, constant_values=True)
    _, hi = _local_range(bad.astype(float), nk, (dk.space > 0).astype(float), 1)
    return hi == 0


def mollify_operator(source, grid, n, kernel=None):
    """Isotropic mollification at scale ``1 / n`` of a field sampled on ``grid``.

    Parameters
    ----------
    source : ndarray or callable
        Either a table of shape ``lead + grid.shape`` (extended beyond the grid
        by repeating edge values) or a sampler ``(t, x) -> lead + batch``
        (evaluated on the enlarged lattice directly). ``lead`` indexes probes,
        e.g. ``(xi, u')`` pairs or ``(alpha, beta)``.
    n : int
        Inverse scale, ``n >= 1``.

    Returns
    -------
    ndarray of shape ``lead + grid.shape``.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer", field="n")
    scale = 1.0 / n
    if scale < 2 * grid.h * (1 - 1e-12):
        raise ResolutionError(f"scale 1/{n} is below twice the mesh size {grid.h}", field="n")
    kernel = kernel or MollifierKernel(grid.d)
    dk = kernel.discrete(grid, scale, scale)
    if _time_independent(source, grid):
        # averaging in time is the identity; only the spatial pass remains
        dk = DiscreteKernel(np.ones(1), dk.space, dk.raw_mass, dk.offsets)
    nk = dk.time.size
    r = dk.radius
    d = grid.d
    if callable(source):
        t = grid.tau * np.arange(grid.nt + nk)
        axes = [lo + grid.h * np.arange(-r, s + r) for lo, s in zip(grid.lower, grid.space_shape)]
        x = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        padded = np.asarray(source(t.reshape((-1,) + (1,) * d), x[None]), dtype=float)
        lead = padded.ndim - 1 - d
        padded = np.broadcast_to(padded, padded.shape[:lead] + (t.size,) + x.shape[:-1]).copy()
    else:
        table = np.asarray(source, dtype=float)
        lead = table.ndim - 1 - d
        if table.shape[lead:] != grid.shape:
            raise DomainError("table does not match the grid shape")
        pad = [(0, 0)] * lead + [(0, nk - 1)] + [(r, r)] * d
        padded = np.pad(table, pad, mode="edge")
    return _convolve(padded, dk, lead + 1)


def _time_independent(source, grid):
    if callable(source):
        return bool(getattr(source, "autonomous", False))
    table = np.asarray(source)
    ax = table.ndim - 1 - grid.d
    first = np.take(table, [0], axis=ax)
    return bool(np.all(table == first))


@dataclass
class MollifierEstimates:
    """Normalized approximation ratios along an eps ladder."""

    eps: list
    r0: list
    r1: list
    holder: float

    @property
    def sup_r0(self):
        return max(self.r0)

    @property
    def sup_r1(self):
        return max(self.r1)

    def spread(self, which="r0"):
        """Largest over smallest ratio along the ladder (1 means scale invariant)."""
        vals = np.asarray(getattr(self, which))
        if vals.max() == 0:
            return 1.0
        return float(vals.max() / vals.min()) if vals.min() > 0 else np.inf


def check_mollifier_estimates(u, kappa, ladder, kernel=None, max_nodes=4096):
    """Ratios ``sup|u - u_eps| / eps^kappa`` and ``sup|Du - Du_eps| / eps^(kappa-1)``.

    Both are divided by ``holder_norm(u, kappa)``; gradients of the mollified
    function are compared only where central differences stay inside its
    support.
    """
    grid = u.grid
    M = holder_norm(u, kappa, max_nodes=max_nodes)
    du = masked_gradient(u.values, u.defined, grid)
    r0, r1 = [], []
    for eps in ladder:
        ue = mollify(u, eps, kernel)
        sel = ue.defined
        r0.append(float(np.abs(u.values - ue.values)[sel].max()) / eps**kappa / M)
        due = masked_gradient(ue.values, sel, grid)
        central = sel.copy()
        for i in range(grid.d):
            ax = 1 + i
            central &= np.roll(sel, 1, axis=ax) & np.roll(sel, -1, axis=ax)
        if central.any():
            diff = np.linalg.norm(du - due, axis=-1)[central]
            r1.append(float(diff.max()) / eps ** (kappa - 1) / M)
        else:
            r1.append(0.0)
    return MollifierEstimates(list(ladder), r0, r1, M)
