"""Radial barrier ``psi(x) = cosh(mu R) - cosh(mu |x - x0|)``.

For ``mu`` large compared with ``K0 / delta_bar`` the function satisfies
``sup_a tr(a D^2 psi) + K0 |D psi| <= -1`` for every ``a`` with spectrum in
``[delta_bar, 1/delta_bar]``, and ``R`` is chosen so that ``psi >= 1`` on the
domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .grid import Jet
from .operators import pucci_max

__all__ = ["CoshBarrier", "BarrierReport", "barrier_jet", "barrier_jets", "verify_barrier", "find_barrier"]


@dataclass(frozen=True)
class CoshBarrier:
    mu: float
    R: float
    center: tuple

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    @property
    def d(self):
        return len(self.center)

    def value(self, x):
        """Barrier values, computed as a product of sinh to avoid cancellation."""
        r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(self.center), axis=-1)
        mu, R = self.mu, self.R
        return 2.0 * np.sinh(0.5 * mu * (R + r)) * np.sinh(0.5 * mu * (R - r))

    def min_on(self, points):
        return float(self.value(points).min())


def barrier_jets(barrier, x):
    """Vectorized gradient and Hessian of the barrier at points ``x[..., d]``.

    At the centre the Hessian is replaced by its limit ``-mu^2 I``.
    """
    x = np.asarray(x, dtype=float)
    mu = barrier.mu
    d = x.shape[-1]
    z = x - np.asarray(barrier.center)
    r = np.linalg.norm(z, axis=-1)
    at_center = r == 0
    rs = np.where(at_center, 1.0, r)
    e = z / rs[..., None]
    sh = np.sinh(mu * r)
    ch = np.cosh(mu * r)
    grad = -mu * sh[..., None] * e
    eye = np.eye(d)
    outer = e[..., :, None] * e[..., None, :]
    # sinh(mu r) / r -> mu as r -> 0
    sinc = np.where(at_center, mu, sh / rs)
    hess = -mu**2 * ch[..., None, None] * outer - (mu * sinc)[..., None, None] * (eye - outer)
    hess = np.where(at_center[..., None, None], -mu**2 * eye, hess)
    return grad, hess


def barrier_jet(barrier, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grad, hess = barrier_jets(barrier, x)
    return Jet(float(barrier.value(x)), grad, 0.5 * (hess + hess.T))


@dataclass
class BarrierReport:
    margin: float
    worst_point: tuple
    min_value: float
    passed: bool

    def as_dict(self):
        return dict(margin=self.margin, worst_point=list(self.worst_point),
                    min_value=self.min_value, passed=self.passed)


def verify_barrier(barrier, points, delta_bar, K0):
    """Check ``P(D^2 psi) + K0 |D psi| <= -1`` and ``psi >= 1`` at ``points``.

    ``P`` is the Pucci maximal operator at ``delta_bar``; together with the
    drift term this is the worst case over all admissible ``(a, b)``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, barrier.d)
    grad, hess = barrier_jets(barrier, pts)
    vals = pucci_max(0.5 * (hess + np.swapaxes(hess, -1, -2)), delta_bar) + K0 * np.linalg.norm(grad, axis=-1)
    k = int(np.argmax(vals))
    margin = float(vals[k])
    psi_min = barrier.min_on(pts)
    return BarrierReport(margin, tuple(pts[k].tolist()), psi_min, margin <= -1.0 and psi_min >= 1.0)


def find_barrier(points, delta_bar, K0):
    """Barrier for the domain sampled by ``points`` (shape ``(m, d)``).

    ``mu = max(1, (K0 + 1) / delta_bar)`` and the centre is the bounding-box
    centre. ``R`` is the smallest float with ``psi >= 1`` at every point.
    """
    pts = np.asarray(points, dtype=float)
    pts = pts.reshape(-1, pts.shape[-1])
    mu = max(1.0, (K0 + 1.0) / delta_bar)
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    rmax = float(np.linalg.norm(pts - center, axis=-1).max())

    # psi(rmax) = 2 sinh(mu (R + rmax) / 2) sinh(mu (R - rmax) / 2) = 1
    def excess(R):
        return 2.0 * math.sinh(0.5 * mu * (R + rmax)) * math.sinh(0.5 * mu * (R - rmax)) - 1.0

    hi = rmax + 1.0
    while excess(hi) < 0:
        hi = rmax + 2 * (hi - rmax)
    R = optimize.brentq(excess, rmax, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    barrier = CoshBarrier(mu, R, tuple(center))
    while barrier.min_on(pts) < 1.0:
        R = float(np.nextafter(R, np.inf))
        barrier = CoshBarrier(mu, R, tuple(center))
    return barrier
