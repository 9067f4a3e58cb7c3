"""Named closed-form coefficient sets, boundary data and default problem files.

All presets are one-dimensional with ``delta = 0.5`` and ``K0 = 1`` unless a
problem file overrides the constants.
"""
from __future__ import annotations

import numpy as np

from .operators import IsaacsCoefficients, MixedIsaacs, SamplerField, gamma_of_kappa

__all__ = ["COEFFICIENTS", "BOUNDARY", "EXACT", "DEFAULT_SPECS", "regime_indicator"]

INTERFACE = 0.45


def regime_indicator(side, x0=INTERFACE):
    """Indicator of ``x1 < x0`` (``side=0``) or ``x1 >= x0`` (``side=1``)."""

    def ind(t, x):
        right = np.asarray(x)[..., 0] >= x0
        val = right if side else ~right
        return np.broadcast_to(val.astype(float), np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))

    ind.autonomous = True
    return ind


def _scalar_diffusion(table):
    """``(nA, nB)`` scalars -> ``(nA, nB, 1, 1)`` matrices."""
    return np.asarray(table, dtype=float)[..., None, None]


def heat(constants):
    return IsaacsCoefficients(_scalar_diffusion([[1.0]]), K0=constants.K0, Hbar=0.0), None


def linear(constants):
    def a(t, x):
        return (1.0 + 0.1 * np.sin(2 * np.pi * x[..., 0]))[None, None, ..., None, None]

    def f(t, x):
        return np.cos(np.pi * x[..., 0])[None, None]

    coeffs = IsaacsCoefficients(
        SamplerField(a, (1, 1), (1, 1), autonomous=True),
        b=[[[0.4]]],
        f=SamplerField(f, (1, 1), autonomous=True),
        K0=constants.K0,
        Hbar=1.0,
    )
    return coeffs, None


_A2 = [[1.0, 0.6], [1.5, 0.8]]
_C2 = [[0.0, 0.5], [0.2, 0.0]]
_F2 = [[1.0, -1.0], [0.5, 0.0]]


def isaacs2x2(constants):
    b = np.array([[[0.5], [-0.5]], [[0.0], [0.3]]])
    coeffs = IsaacsCoefficients(_scalar_diffusion(_A2), b=b, c=_C2, f=_F2, K0=constants.K0, Hbar=1.0)
    return coeffs, None


_HOLDER_BASE = np.array([[0.9, 0.6], [1.2, 0.7]])
_HOLDER_AMP = 0.3
_HOLDER_CENTER = 0.5
_HOLDER_B = np.array([[[0.4], [-0.3]], [[0.1], [0.2]]])
_HOLDER_C = np.array([[0.0, 0.3], [0.5, 0.1]])
_F_LEFT = np.array([[1.0, -0.5], [0.5, 0.0]])
_F_RIGHT = np.array([[-1.0, 0.5], [0.0, -0.5]])


def _holder_diffusion(constants):
    gamma = gamma_of_kappa(constants.kappa)

    def a(t, x):
        bump = _HOLDER_AMP * np.abs(x[..., 0] - _HOLDER_CENTER) ** gamma
        return (_HOLDER_BASE.reshape((2, 2) + (1,) * bump.ndim) + bump[None, None])[..., None, None]

    return SamplerField(a, (2, 2), (1, 1), autonomous=True)


def holder_isaacs(constants):
    """Hölder-continuous diffusion and a source that jumps across ``x1 = 0.45``."""

    def f(t, x):
        right = (x[..., 0] >= INTERFACE)[None, None]
        shape = (2, 2) + (1,) * (right.ndim - 2)
        return np.where(right, _F_RIGHT.reshape(shape), _F_LEFT.reshape(shape))

    coeffs = IsaacsCoefficients(
        _holder_diffusion(constants),
        b=_HOLDER_B,
        c=_HOLDER_C,
        f=SamplerField(f, (2, 2), autonomous=True),
        K0=constants.K0,
        Hbar=1.0,
    )
    return coeffs, None


def measurable_f(constants):
    """Same operator as ``holder_isaacs`` written as two constant-source regimes.

    The second return value lists ``(indicator, part)`` pairs; mollifying the
    indicators gives the mollified operator exactly.
    """
    a = _holder_diffusion(constants)
    parts = [
        IsaacsCoefficients(a, b=_HOLDER_B, c=_HOLDER_C, f=_F_LEFT, K0=constants.K0, Hbar=1.0),
        IsaacsCoefficients(a, b=_HOLDER_B, c=_HOLDER_C, f=_F_RIGHT, K0=constants.K0, Hbar=1.0),
    ]
    regimes = [(regime_indicator(0), parts[0]), (regime_indicator(1), parts[1])]
    return MixedIsaacs(parts, [ind for ind, _ in regimes]), regimes


def bellman(constants):
    """Two controls, no opponent."""
    coeffs = IsaacsCoefficients(
        _scalar_diffusion([[1.0], [0.6]]),
        b=[[[0.3]], [[-0.2]]],
        c=[[0.0], [0.5]],
        f=[[0.5], [-0.3]],
        K0=constants.K0,
        Hbar=0.5,
    )
    return coeffs, None


COEFFICIENTS = {
    "heat": heat,
    "linear": linear,
    "isaacs2x2": isaacs2x2,
    "holder_isaacs": holder_isaacs,
    "measurable_f": measurable_f,
    "bellman": bellman,
}


def _heat_exact(t, x):
    return np.exp(t) * np.sin(x[..., 0])


def _kink(t, x):
    return np.abs(x[..., 0] - 0.5) + 0.0 * t


def _smooth(t, x):
    return np.sin(np.pi * x[..., 0]) + 0.5 * x[..., 0] + 0.0 * t


def _zero(t, x):
    return 0.0 * (x[..., 0] + t)


BOUNDARY = {"heat_exact": _heat_exact, "kink": _kink, "smooth": _smooth, "zero": _zero}
EXACT = {"heat_exact": _heat_exact}

_COMMON_CONSTANTS = """
[constants]
# ellipticity of the diffusion and of the cutoff operator
delta = 0.5
delta_bar = 0.25
kappa = 1.2
K0 = 1.0
tau_mod = 0.5
# modulus table r:omega(r)
omega = 0:0, 1:1
# doubling parameters
eps0 = 0.5
nu = 0.25
"""

_LADDER = "1 2 4 8 16 32 64 128 256"
_LADDER512 = "1 2 4 8 16 32 64 128 256 512"
_LONG_LADDER = "1 2 4 8 16 32 64 128 256 512 1024 2048"

DEFAULT_SPECS = {
    "heat": f"""
[problem]
name = heat
[grid]
d = 1
# time units
T = 1.0
lower = 0
upper = 3.141592653589793
h = 0.09817477042468103
tau = auto
[domain]
shape = box
[coefficients]
preset = heat
[boundary]
preset = heat_exact
{_COMMON_CONSTANTS}
[experiment]
K_ladder = 1000000
tol = 1e-3
seed = 0
""",
    "linear": f"""
[problem]
name = linear
[grid]
d = 1
T = 0.5
lower = 0
upper = 1
h = 0.03125
tau = auto
[domain]
shape = box
[coefficients]
preset = linear
[boundary]
preset = smooth
{_COMMON_CONSTANTS}
[experiment]
K_ladder = 1 10 100 1000 10000
tol = 1e-8
seed = 0
""",
    "isaacs2x2": f"""
[problem]
name = isaacs2x2
[grid]
d = 1
T = 0.25
lower = 0
upper = 1
h = 0.03125
tau = auto
[domain]
shape = box
[coefficients]
preset = isaacs2x2
[boundary]
preset = kink
{_COMMON_CONSTANTS}
[experiment]
K_ladder = {_LADDER}
tol = 1e-3
seed = 0
""",
    "holder_isaacs": f"""
[problem]
name = holder_isaacs
[grid]
d = 1
T = 0.25
lower = 0
upper = 1
h = 0.03125
tau = auto
[domain]
shape = box
[coefficients]
preset = holder_isaacs
[boundary]
preset = kink
{_COMMON_CONSTANTS}
[experiment]
K_ladder = {_LADDER512}
tol = 1e-3
seed = 0
viscosity_C = 10
viscosity_nodes = 24
""",
    "measurable_f": f"""
[problem]
name = measurable_f
[grid]
d = 1
T = 0.25
lower = 0
upper = 1
h = 0.015625
tau = auto
[domain]
shape = box
[coefficients]
preset = measurable_f
[boundary]
preset = kink
{_COMMON_CONSTANTS}
[experiment]
K_ladder = {_LONG_LADDER}
n_ladder = 2 4 8 16
tol = 1e-3
seed = 0
probe_M = 2
probe_count = 5
""",
    "bellman": f"""
[problem]
name = bellman
[grid]
d = 1
T = 0.5
lower = 0
upper = 1
h = 0.03125
tau = auto
[domain]
shape = box
[coefficients]
preset = bellman
[boundary]
preset = smooth
{_COMMON_CONSTANTS}
[experiment]
K_ladder = 1 10 100 1000 10000
tol = 1e-8
seed = 0
""",
}
