import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from isaacslab.errors import DomainError, ResolutionError
from isaacslab.grid import GridFunction, SpaceTimeGrid
from isaacslab.mollify import (
    MollifierKernel,
    check_mollifier_estimates,
    mollify,
    mollify_operator,
)

from oracles import parabolic_mass, radial_mass_fraction, step_mollified


def line_grid(h=1 / 64, T=0.25, tau=1 / 256, lo=-1.0, hi=1.0):
    return SpaceTimeGrid(1, T, [lo], [hi], h, tau)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_kernel_has_unit_mass(d):
    k = MollifierKernel(d)
    # time factor times radial shell integral, integrated independently
    time_part = integrate.quad(lambda s: math.exp(1 / ((2 * s + 1) ** 2 - 1)) if -1 < s < 0 else 0.0,
                               -1, 0, epsabs=1e-15)[0]
    shell = {1: 2.0, 2: 2 * math.pi, 3: 4 * math.pi}[d]
    space_part = shell * integrate.quad(lambda r: math.exp(1 / (r * r - 1)) * r ** (d - 1) if r < 1 else 0.0,
                                        0, 1, epsabs=1e-15)[0]
    assert k.C * time_part * space_part == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("eps", [0.1, 0.2, 0.4])
def test_parabolic_scaling_keeps_unit_mass(eps):
    assert parabolic_mass(MollifierKernel(1), eps) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("eps", [1 / 32, 0.1, 0.2, 0.4])
def test_discrete_weights_sum_to_one(eps):
    g = line_grid()
    dk = MollifierKernel(1).discrete(g, eps**2, eps)
    assert abs(dk.weights.sum() - 1.0) <= 1e-12
    assert np.all(dk.weights >= 0)
    assert abs(dk.raw_mass - 1.0) < 1e-2


def test_constants_and_affine_reproduced():
    g = line_grid()
    const = GridFunction(g, np.full(g.shape, 3.25))
    out = mollify(const, 0.2)
    assert np.all(out.values[out.defined] == 3.25)
    lin = GridFunction.from_callable(g, lambda t, x: 2 * x[..., 0] - 0.5 + 0 * t)
    out = mollify(lin, 0.2)
    assert np.abs(out.values - lin.values)[out.defined].max() < 1e-13


def test_quadratic_shift_is_second_moment():
    g = line_grid(h=1 / 256)
    eps = 0.2
    u = GridFunction.from_callable(g, lambda t, x: x[..., 0] ** 2 + 0 * t)
    out = mollify(u, eps)
    shift = (out.values - u.values)[out.defined]
    k = MollifierKernel(1)
    # quadrature of the continuous second moment is the independent route
    assert np.allclose(shift, k.second_moment(eps), rtol=1e-3)
    dk = k.discrete(g, eps**2, eps)
    assert np.allclose(shift, dk.spatial_second_moment, rtol=1e-10)


def test_mollify_support_is_shrunk_window():
    g = line_grid()
    out = mollify(GridFunction(g, np.ones(g.shape)), 0.25)
    xs = g.axes[0][out.defined.any(axis=0)]
    assert xs.min() > -0.75 and xs.max() < 0.75
    assert g.times[out.defined.any(axis=1)].max() <= g.T - 0.0625 + 1e-12


def test_mollify_rejects_unresolved_and_empty():
    g = line_grid()
    u = GridFunction(g, np.zeros(g.shape))
    with pytest.raises(ResolutionError):
        mollify(u, g.h)
    with pytest.raises(DomainError):
        mollify(u, 1.2)


def test_operator_constant_is_unchanged():
    g = line_grid(h=1 / 32)
    table = np.full((2, 2) + g.shape, 0.7)
    assert np.array_equal(mollify_operator(table, g, 4), table)


def test_operator_affine_in_time_bound():
    g = line_grid(h=1 / 32, tau=1 / 128, T=0.5)
    lip = 2.0
    table = np.broadcast_to((lip * g.times)[:, None], g.shape).copy()
    n = 4
    out = mollify_operator(table, g, n)
    inner = g.times <= g.T - 1 / n
    # the kernel averages over (t, t + 1/n): the shift is at most Lip_t / n
    assert np.abs(out - table)[inner].max() <= lip / n + 1e-12


@pytest.mark.parametrize("n", [2, 4, 8])
def test_operator_step_matches_exact_convolution(n):
    g = line_grid(h=1 / 64)
    table = np.broadcast_to((g.axes[0] >= 0).astype(float), g.shape).copy()
    out = mollify_operator(table, g, n)
    x = g.axes[0]
    ref = np.array([step_mollified(xi, 1 / n, g.h) for xi in x])
    assert np.allclose(out[0], ref, atol=1e-12)
    j0 = np.argmin(np.abs(x))
    k = MollifierKernel(1).discrete(g, 1 / n, 1 / n)
    m0 = k.space[k.radius]
    assert abs(out[0, j0] - table[0, j0]) == pytest.approx((1 - m0) / 2, abs=1e-12)
    far = np.abs(x) > 1 / n
    assert np.all(out[:, far] == table[:, far])
    # continuum check away from the lattice effects
    j = np.argmin(np.abs(x - 0.5 / n))
    assert out[0, j] == pytest.approx(radial_mass_fraction(x[j] * n), abs=0.05)


def test_operator_accepts_samplers():
    g = line_grid(h=1 / 32)

    def f(t, x):
        return np.sin(x[..., 0]) + 0 * t

    f.autonomous = True
    out = mollify_operator(f, g, 4)
    sampled = np.broadcast_to(np.sin(g.points[..., 0]), g.shape)
    assert np.abs(out - sampled).max() < 0.05


def test_estimates_zero_on_affine():
    g = line_grid()
    u = GridFunction.from_callable(g, lambda t, x: 1 - x[..., 0] + 0 * t)
    est = check_mollifier_estimates(u, 1.5, [0.1, 0.2])
    assert max(est.r0) < 1e-12 and max(est.r1) < 1e-10


def test_estimates_on_quadratic_follow_second_moment():
    g = line_grid(h=1 / 128)
    u = GridFunction.from_callable(g, lambda t, x: x[..., 0] ** 2 + 0 * t)
    ladder = [0.1, 0.2, 0.4]
    est = check_mollifier_estimates(u, 1.5, ladder)
    k = MollifierKernel(1)
    for eps, r0 in zip(ladder, est.r0):
        assert r0 == pytest.approx(k.second_moment(eps) / eps**1.5 / est.holder, rel=1e-2)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([0.0625, 0.125, 0.25]))
def test_mollify_preserves_bounds(a, b, eps):
    g = line_grid(h=1 / 32, tau=1 / 64)
    rng = np.random.default_rng(int(abs(a * 1000)))
    vals = rng.uniform(min(a, b), max(a, b) + 1e-9, g.shape)
    out = mollify(GridFunction(g, vals), eps)
    sel = out.defined
    assert out.values[sel].min() >= vals.min() - 1e-12
    assert out.values[sel].max() <= vals.max() + 1e-12
