"""Space-time grids, grid functions and discrete calculus.

A :class:`SpaceTimeGrid` discretizes ``[0, T] x box`` uniformly; the spatial
domain is a boolean node mask inside the box. Nodes whose full 3**d stencil
is masked are *interior*; the remaining masked nodes form the lateral
boundary where Dirichlet data is imposed.
"""
from __future__ import annotations

import io
import itertools
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import BoundaryNodeError, DomainError, GridError, SymmetryError

__all__ = [
    "SpaceTimeGrid",
    "GridFunction",
    "Window",
    "Jet",
    "fit_tau",
    "discrete_jet",
    "central_jets",
    "masked_gradient",
    "holder_seminorm",
    "holder_norm",
    "shrink",
    "write_csv",
    "read_csv",
    "format_float",
]


def format_float(value):
    """17 significant digits, the precision used by every CSV artifact."""
    return f"{float(value):.17g}"


def _fit_count(length, step, name):
    ratio = length / step
    count = int(round(ratio))
    if count < 1 or abs(count - ratio) > 1e-8 * max(1.0, ratio):
        raise GridError(f"step {name}={step!r} does not divide {length!r}", field=name)
    return count


def fit_tau(T, tau_max):
    """Largest time step <= ``tau_max`` that divides ``T`` exactly."""
    if tau_max <= 0:
        raise GridError("tau bound must be positive", field="tau")
    return T / math.ceil(T / tau_max * (1 - 1e-12))


def _shift(a, axis, k, fill=0.0):
    """``out[i] = a[i + k]`` along ``axis``; out-of-range entries get ``fill``."""
    out = np.full_like(a, fill)
    n = a.shape[axis]
    if abs(k) >= n:
        return out
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if k >= 0:
        src[axis] = slice(k, n)
        dst[axis] = slice(0, n - k)
    else:
        src[axis] = slice(0, n + k)
        dst[axis] = slice(-k, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


@dataclass(frozen=True, eq=False)
class SpaceTimeGrid:
    """Uniform tensor grid on ``[0, T] x prod_i [lower_i, upper_i]``.

    Parameters
    ----------
    d : int
        Spatial dimension, 1 to 3.
    T : float
        Time horizon.
    lower, upper : sequence of float
        Corners of the spatial bounding box.
    h : float
        Spatial step; must divide every box edge.
    tau : float
        Time step; must divide ``T``.
    mask : ndarray of bool, optional
        Spatial node mask marking the closure of the domain. Defaults to the
        whole box.
    """

    d: int
    T: float
    lower: tuple
    upper: tuple
    h: float
    tau: float
    mask: np.ndarray | None = None

    def __post_init__(self):
        d = int(self.d)
        if d not in (1, 2, 3):
            raise GridError("dimension must be 1, 2 or 3", field="d")
        if not self.T > 0:
            raise GridError("horizon T must be positive", field="T")
        if not self.h > 0:
            raise GridError("spatial step must be positive", field="h")
        if not self.tau > 0:
            raise GridError("time step must be positive", field="tau")
        lower = tuple(float(v) for v in np.broadcast_to(np.asarray(self.lower, float), (d,)))
        upper = tuple(float(v) for v in np.broadcast_to(np.asarray(self.upper, float), (d,)))
        if any(hi <= lo for lo, hi in zip(lower, upper)):
            raise GridError("box must have positive extent", field="box")
        counts = tuple(_fit_count(hi - lo, self.h, "h") for lo, hi in zip(lower, upper))
        nt = _fit_count(self.T, self.tau, "tau")
        space_shape = tuple(c + 1 for c in counts)
        if self.mask is None:
            mask = np.ones(space_shape, dtype=bool)
        else:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != space_shape:
                raise GridError(f"mask shape {mask.shape} != node shape {space_shape}", field="mask")
        if not mask.any():
            raise GridError("mask selects no nodes", field="mask")
        _, ncomp = ndimage.label(mask)
        if ncomp != 1:
            raise GridError(f"mask has {ncomp} connected components", field="mask")
        mask.setflags(write=False)

        padded = np.pad(mask, 1, constant_values=False)
        interior = mask.copy()
        for off in itertools.product((-1, 0, 1), repeat=d):
            sl = tuple(slice(1 + o, 1 + o + n) for o, n in zip(off, space_shape))
            interior &= padded[sl]
        interior.setflags(write=False)

        object.__setattr__(self, "d", d)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "_nt", nt)
        object.__setattr__(self, "_space_shape", space_shape)
        object.__setattr__(self, "_interior", interior)

    @classmethod
    def disc(cls, d, T, center, radius, h, tau):
        """Grid on the bounding box of a ball with the ball as mask."""
        center = np.broadcast_to(np.asarray(center, float), (d,))
        grid = cls(d, T, center - radius, center + radius, h, tau)
        dist = np.linalg.norm(grid.points - center, axis=-1)
        return replace(grid, mask=dist <= radius * (1 + 1e-9))

    def with_tau(self, tau):
        return replace(self, tau=tau)

    @property
    def nt(self):
        """Number of time steps; time levels are ``0..nt``."""
        return self._nt

    @property
    def space_shape(self):
        return self._space_shape

    @property
    def shape(self):
        return (self._nt + 1,) + self._space_shape

    @property
    def interior(self):
        return self._interior

    @property
    def boundary(self):
        return self.mask & ~self._interior

    @property
    def times(self):
        t = self.tau * np.arange(self._nt + 1, dtype=float)
        t[-1] = self.T
        return t

    @property
    def axes(self):
        return [lo + self.h * np.arange(n) for lo, n in zip(self.lower, self._space_shape)]

    @property
    def points(self):
        """Node coordinates, shape ``space_shape + (d,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def cell_volume(self):
        return self.tau * self.h**self.d

    @property
    def full_mask(self):
        """Space-time mask of all domain nodes."""
        return np.broadcast_to(self.mask, self.shape)

    def distance_to_complement(self):
        """Distance from each node to the nearest boundary or outside node."""
        return ndimage.distance_transform_edt(self._interior, sampling=self.h)

    def sample(self, fn):
        """Evaluate ``fn(t, x)`` on all nodes; ``t`` broadcasts against ``x[..., 0]``."""
        t = self.times.reshape((-1,) + (1,) * self.d)
        x = self.points[None]
        vals = np.broadcast_to(np.asarray(fn(t, x), dtype=float), self.shape)
        return np.where(self.mask, vals, 0.0)


@dataclass(frozen=True, eq=False)
class Window:
    """A subset of space-time nodes of a grid (``mask`` has the grid's shape)."""

    grid: SpaceTimeGrid
    mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != self.grid.shape:
            raise GridError("window mask must match the grid shape")
        mask &= self.grid.full_mask
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def full(cls, grid):
        return cls(grid, grid.full_mask)

    @property
    def empty(self):
        return not self.mask.any()

    @property
    def count(self):
        return int(self.mask.sum())

    def __contains__(self, node):
        return bool(self.mask[tuple(node)])

    def issubset(self, other):
        return not np.any(self.mask & ~other.mask)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal values on a grid. Immutable; arithmetic returns new instances.

    ``support`` optionally restricts where the values are meaningful (e.g. a
    mollified function lives on a shrunken window only). Values outside the
    support or the mask are stored as zero.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != self.grid.shape:
            raise GridError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("grid function values must be finite")
        defined = self.grid.full_mask
        if self.support is not None:
            sup = np.array(self.support, dtype=bool)
            if sup.shape != self.grid.shape:
                raise GridError("support must match the grid shape")
            defined = defined & sup
            sup.setflags(write=False)
            object.__setattr__(self, "support", sup)
        vals = np.where(defined, vals, 0.0)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid, fn):
        return cls(grid, grid.sample(fn))

    @property
    def defined(self):
        if self.support is None:
            return self.grid.full_mask
        return self.grid.full_mask & self.support

    def _combine(self, other, op):
        if isinstance(other, GridFunction):
            if other.grid is not self.grid:
                raise GridError("grid functions live on different grids")
            support = None
            if self.support is not None or other.support is not None:
                support = self.defined & other.defined
            return GridFunction(self.grid, op(self.values, other.values), support)
        return GridFunction(self.grid, op(self.values, float(other)), self.support)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values, self.support)

    def sup_abs(self, where=None):
        sel = self.defined if where is None else (self.defined & where)
        if not sel.any():
            return 0.0
        return float(np.abs(self.values[sel]).max())


@dataclass(frozen=True)
class Jet:
    """Point value, spatial gradient and spatial Hessian of a function."""

    value: float
    grad: np.ndarray
    hess: np.ndarray

    def __post_init__(self):
        grad = np.atleast_1d(np.asarray(self.grad, dtype=float))
        hess = np.atleast_2d(np.asarray(self.hess, dtype=float))
        if hess.shape != (grad.size, grad.size):
            raise DomainError("Hessian shape does not match gradient length")
        if np.abs(hess - hess.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(hess).max(initial=0.0)):
            raise SymmetryError("jet Hessian is not symmetric")
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "grad", grad)
        object.__setattr__(self, "hess", hess)

    @property
    def d(self):
        return self.grad.size


def _spatial_index(grid, node):
    node = tuple(int(i) for i in node)
    if len(node) != grid.d + 1:
        raise DomainError(f"node must have {grid.d + 1} indices (time first)")
    n, idx = node[0], node[1:]
    if not 0 <= n <= grid.nt:
        raise DomainError("time index out of range")
    if any(not 0 <= i < s for i, s in zip(idx, grid.space_shape)) or not grid.interior[idx]:
        raise BoundaryNodeError(f"node {node} is not an interior node")
    return n, idx


def discrete_jet(u, node):
    """Central-difference jet of ``u`` at an interior ``node = (n, i1, ..., id)``.

    Cross derivatives use the four-point diagonal difference, so the jet is
    exact for quadratic polynomials.
    """
    grid = u.grid
    n, idx = _spatial_index(grid, node)
    v = u.values[n]
    h = grid.h
    d = grid.d

    def at(offset):
        return v[tuple(i + o for i, o in zip(idx, offset))]

    e = np.eye(d, dtype=int)
    grad = np.empty(d)
    hess = np.empty((d, d))
    c = at(np.zeros(d, dtype=int))
    for i in range(d):
        up, dn = at(e[i]), at(-e[i])
        grad[i] = (up - dn) / (2 * h)
        hess[i, i] = (up - 2 * c + dn) / h**2
        for j in range(i + 1, d):
            cross = (at(e[i] + e[j]) - at(e[i] - e[j]) - at(-e[i] + e[j]) + at(-e[i] - e[j])) / (4 * h**2)
            hess[i, j] = hess[j, i] = cross
    return Jet(c, grad, hess)


def central_jets(values, grid):
    """Vectorized central-difference gradient and Hessian.

    ``values`` has shape ``lead + space_shape``. Returns ``(grad, hess)`` of
    shapes ``lead + space_shape + (d,)`` and ``... + (d, d)``; entries at
    non-interior nodes are zero.
    """
    values = np.asarray(values, dtype=float)
    d, h = grid.d, grid.h
    lead = values.ndim - d
    axes = [lead + i for i in range(d)]
    grad = np.zeros(values.shape + (d,))
    hess = np.zeros(values.shape + (d, d))
    for i in range(d):
        up = _shift(values, axes[i], 1)
        dn = _shift(values, axes[i], -1)
        grad[..., i] = (up - dn) / (2 * h)
        hess[..., i, i] = (up - 2 * values + dn) / h**2
        for j in range(i + 1, d):
            pp = _shift(_shift(values, axes[i], 1), axes[j], 1)
            pm = _shift(_shift(values, axes[i], 1), axes[j], -1)
            mp = _shift(_shift(values, axes[i], -1), axes[j], 1)
            mm = _shift(_shift(values, axes[i], -1), axes[j], -1)
            hess[..., i, j] = hess[..., j, i] = (pp - pm - mp + mm) / (4 * h**2)
    inside = grid.interior[(...,) + (None,)]
    grad = np.where(inside, grad, 0.0)
    hess = np.where(inside[..., None], hess, 0.0)
    return grad, hess


def masked_gradient(values, defined, grid):
    """Spatial gradient that only reads nodes where ``defined`` holds.

    Central differences where both neighbours are defined, one-sided where
    only one is, zero where neither is. Shapes: ``values`` and ``defined`` are
    ``grid.shape``; the result is ``grid.shape + (d,)``.
    """
    h = grid.h
    out = np.zeros(values.shape + (grid.d,))
    for i in range(grid.d):
        ax = 1 + i
        up, up_ok = _shift(values, ax, 1), _shift(defined, ax, 1, False)
        dn, dn_ok = _shift(values, ax, -1), _shift(defined, ax, -1, False)
        g = np.where(up_ok & dn_ok, (up - dn) / (2 * h),
                     np.where(up_ok, (up - values) / h, np.where(dn_ok, (values - dn) / h, 0.0)))
        out[..., i] = np.where(defined, g, 0.0)
    return out


def _check_kappa(kappa):
    if not 1.0 < kappa < 2.0:
        raise DomainError(f"kappa={kappa} must lie in (1, 2)", field="kappa")


def _window_nodes(u, window, max_nodes):
    sel = window.mask & u.defined
    if not sel.any():
        raise DomainError("empty window")
    levels = np.flatnonzero(sel.reshape(sel.shape[0], -1).any(axis=1))
    count = int(sel.sum())
    if count > max_nodes:
        # thin out time levels first, then space
        stride = math.ceil(count / max_nodes)
        keep = np.zeros(sel.shape[0], dtype=bool)
        keep[levels[::stride]] = True
        sel = sel & keep.reshape((-1,) + (1,) * u.grid.d)
        count = int(sel.sum())
        if count > max_nodes:
            flat = np.flatnonzero(sel)
            chosen = flat[np.linspace(0, flat.size - 1, max_nodes).round().astype(int)]
            sel = np.zeros_like(sel)
            sel.flat[chosen] = True
    return sel


def holder_seminorm(u, kappa, window=None, max_nodes=4096, gradient=None):
    """Discrete parabolic C^kappa seminorm over node pairs of ``window``.

    ``sup |u(s,y) - u(t,x) - Du(t,x).(y-x)| / (|x-y| + |t-s|**0.5)**kappa``.
    Windows with more than ``max_nodes`` nodes are thinned deterministically
    (time levels first), which makes the result a lower estimate.
    """
    _check_kappa(kappa)
    grid = u.grid
    window = Window.full(grid) if window is None else window
    sel = _window_nodes(u, window, max_nodes)
    if gradient is None:
        gradient = masked_gradient(u.values, u.defined, grid)
    idx = np.nonzero(sel)
    t = grid.times[idx[0]]
    x = np.stack([grid.axes[i][idx[1 + i]] for i in range(grid.d)], axis=-1)
    v = u.values[idx]
    g = gradient[idx]
    best = 0.0
    chunk = max(1, 2_000_000 // max(1, t.size))
    for start in range(0, t.size, chunk):
        sl = slice(start, start + chunk)
        dx = x[None, :, :] - x[sl, None, :]
        rho = np.linalg.norm(dx, axis=-1) + np.sqrt(np.abs(t[None, :] - t[sl, None]))
        num = np.abs(v[None, :] - v[sl, None] - np.einsum("ijk,ik->ij", dx, g[sl]))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rho > 0, num / rho**kappa, 0.0)
        best = max(best, float(ratio.max(initial=0.0)))
    return best


def holder_norm(u, kappa, window=None, max_nodes=4096):
    """``sup|u| + sup|Du| + holder_seminorm`` over the window."""
    _check_kappa(kappa)
    grid = u.grid
    window = Window.full(grid) if window is None else window
    sel = window.mask & u.defined
    if not sel.any():
        raise DomainError("empty window")
    grad = masked_gradient(u.values, u.defined, grid)
    sup_u = float(np.abs(u.values[sel]).max())
    sup_du = float(np.linalg.norm(grad[sel], axis=-1).max())
    return sup_u + sup_du + holder_seminorm(u, kappa, window, max_nodes, gradient=grad)


def shrink(grid, rho):
    """Window of nodes with ``t <= T - rho**2`` and distance to the complement ``> rho``.

    May be empty; callers decide whether that is an error.
    """
    if not rho > 0:
        raise DomainError("rho must be positive", field="rho")
    dist = grid.distance_to_complement()
    space_ok = dist > rho + 1e-9 * max(grid.h, rho)
    time_ok = grid.times <= grid.T - rho**2 + 1e-12 * grid.T
    mask = time_ok.reshape((-1,) + (1,) * grid.d) & space_ok[None]
    return Window(grid, mask)


def _csv_rows(u):
    grid = u.grid
    idx = np.nonzero(u.defined)
    cols = [grid.times[idx[0]]] + [grid.axes[i][idx[1 + i]] for i in range(grid.d)] + [u.values[idx]]
    return np.stack(cols, axis=-1)


def write_csv(u, target):
    """Write ``t,x1..xd,value`` rows (time-major, lexicographic space)."""
    header = ",".join(["t"] + [f"x{i + 1}" for i in range(u.grid.d)] + ["value"])
    lines = [header]
    lines.extend(",".join(format_float(v) for v in row) for row in _csv_rows(u))
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        target.write(text)


def read_csv(source, grid):
    """Inverse of :func:`write_csv`; nodes absent from the file become unsupported."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != grid.d + 2:
        raise GridError(f"expected {grid.d + 2} columns, got {data.shape[1]}")
    n = np.rint(data[:, 0] / grid.tau).astype(int)
    spatial = [np.rint((data[:, 1 + i] - grid.lower[i]) / grid.h).astype(int) for i in range(grid.d)]
    values = np.zeros(grid.shape)
    support = np.zeros(grid.shape, dtype=bool)
    key = (n, *spatial)
    values[key] = data[:, -1]
    support[key] = True
    if support[grid.full_mask].all():
        return GridFunction(grid, values)
    return GridFunction(grid, values, support)
