import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isaacslab.errors import DomainError, SymmetryError, UnsupportedFormError
from isaacslab.grid import Jet
from isaacslab.operators import (
    EllipticityBounds,
    IsaacsCoefficients,
    MixedIsaacs,
    SamplerField,
    StructureConstants,
    cutoff_lower,
    cutoff_upper,
    exp_transform,
    exp_transform_data,
    gamma_of_kappa,
    isaacs_eval,
    pucci_max,
    pucci_min,
    validate_structure,
)

from oracles import isaacs_loops, pucci_maximizer, random_ellipticity_matrices, random_symmetric


def test_pucci_examples():
    assert pucci_max(np.zeros((2, 2)), 0.5) == 0.0
    assert pucci_max(np.eye(2), 0.5) == pytest.approx(4.0)
    assert pucci_max(np.diag([1.0, -1.0]), 0.5) == pytest.approx(1.5)


def test_pucci_brute_force_approaches_from_below():
    rng = np.random.default_rng(1)
    a = random_ellipticity_matrices(rng, 2, 0.5, 100_000)
    traces = np.einsum("kii->k", a)
    assert traces.max() <= 4.0
    assert traces.max() > 3.9


def test_pucci_rejects_nonsymmetric():
    with pytest.raises(SymmetryError):
        pucci_max(np.array([[0.0, 1.0], [0.0, 0.0]]), 0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.sampled_from([0.2, 0.5]), st.integers(0, 2**31))
def test_pucci_dominates_and_is_attained(d, delta_bar, seed):
    rng = np.random.default_rng(seed)
    X = random_symmetric(rng, d)
    P = pucci_max(X, delta_bar)
    a = random_ellipticity_matrices(rng, d, delta_bar, 500)
    assert np.all(np.einsum("kij,ji->k", a, X) <= P + 1e-10)
    star = pucci_maximizer(X, delta_bar)
    assert np.trace(star @ X) == pytest.approx(P, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.floats(0.1, 0.9), st.integers(0, 2**31), st.floats(0.01, 10))
def test_pucci_convex_homogeneous_and_dual(d, delta_bar, seed, s):
    rng = np.random.default_rng(seed)
    X, Y = random_symmetric(rng, d), random_symmetric(rng, d)
    assert pucci_max(s * X, delta_bar) == pytest.approx(s * pucci_max(X, delta_bar), rel=1e-12, abs=1e-12)
    assert pucci_max(X + Y, delta_bar) <= pucci_max(X, delta_bar) + pucci_max(Y, delta_bar) + 1e-10
    assert pucci_min(X, delta_bar) <= pucci_max(X, delta_bar) + 1e-12


def test_single_pair_reduces_to_trace():
    coeffs = IsaacsCoefficients(np.eye(2)[None, None])
    jet = Jet(0.0, [0.0, 0.0], np.diag([2.0, 3.0]))
    assert isaacs_eval(coeffs, jet, 0.0, [0.0, 0.0]) == pytest.approx(5.0)


def test_two_by_two_payoff_table():
    # a = 1 in 1D and X = 1 make the trace contribute 1; f supplies the rest
    f = np.array([[0.0, 3.0], [2.0, 1.0]])
    coeffs = IsaacsCoefficients(np.ones((2, 2, 1, 1)), f=f)
    jet = Jet(0.0, [0.0], [[1.0]])
    assert isaacs_eval(coeffs, jet, 0.0, [0.0]) == pytest.approx(2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(0, 2**31))
def test_hamiltonian_matches_loops(nA, nB, d, seed):
    rng = np.random.default_rng(seed)
    a = random_ellipticity_matrices(rng, d, 0.5, nA * nB).reshape(nA, nB, d, d)
    b = rng.uniform(-1, 1, (nA, nB, d))
    c = rng.uniform(0, 1, (nA, nB))
    f = rng.uniform(-1, 1, (nA, nB))
    coeffs = IsaacsCoefficients(a, b, c, f)
    u0 = rng.normal()
    p = rng.normal(size=d)
    X = random_symmetric(rng, d)
    ref = isaacs_loops(a, b, c, f, u0, p, X)
    assert coeffs.hamiltonian(u0, p, X, 0.0, np.zeros(d)) == pytest.approx(ref, abs=1e-12)


def test_cutoff_examples():
    assert cutoff_upper(-3.0, 10.0, 5.0) == 5.0
    assert cutoff_upper(0.0, 0.0, 1.0) == 0.0
    assert cutoff_upper(2.0, 5.0, 3.0) == 2.0
    assert cutoff_lower(-2.0, 5.0, 3.0) == -2.0
    assert cutoff_lower(3.0, 4.0, 1.0) == -3.0


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50), st.integers(0, 2**31), st.floats(1, 100))
def test_cutoffs_bracket_operator(hval, seed, K):
    rng = np.random.default_rng(seed)
    X = random_symmetric(rng, 2)
    # H lies between the extremal operators up to lower-order terms; here the
    # cutoffs are compared with H itself
    up = cutoff_upper(hval, pucci_max(X, 0.5), K)
    lo = cutoff_lower(hval, pucci_max(-X, 0.5), K)
    assert up >= hval and lo <= hval


def test_gamma_of_kappa():
    assert gamma_of_kappa(1.5) == pytest.approx(2.5 / 6)
    assert gamma_of_kappa(1 + 1e-12) == pytest.approx(0.5)
    assert gamma_of_kappa(2 - 1e-12) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        gamma_of_kappa(2.0)


def test_constants_validation():
    with pytest.raises(DomainError):
        EllipticityBounds(0.5, 0.6)
    with pytest.raises(DomainError):
        StructureConstants(omega=((0.0, 0.1), (1.0, 1.0)))
    with pytest.raises(DomainError):
        StructureConstants(tau_mod=1.0)
    assert EllipticityBounds(0.5).delta_bar == 0.25
    sc = StructureConstants(omega=((0, 0), (1, 2)))
    assert sc.omega_at(0.5) == pytest.approx(1.0)


def test_exp_transform_identity_and_second_order():
    coeffs = IsaacsCoefficients(np.ones((1, 1, 1, 1)), K0=1.0)
    assert exp_transform(coeffs, 0.0) is coeffs
    tr = exp_transform(coeffs, 2.0)
    # H(u) = u''  ->  u'' - c u0
    assert tr.hamiltonian(3.0, [0.0], [[1.5]], 0.0, [0.0]) == pytest.approx(1.5 - 6.0)
    assert tr.K0 == 3.0


def test_exp_transform_slope_in_u0():
    coeffs = IsaacsCoefficients(np.ones((2, 2, 1, 1)), f=np.arange(4.0).reshape(2, 2), K0=1.0)
    c = coeffs.K0 + 1
    tr = exp_transform(coeffs, c)
    h1 = tr.hamiltonian(1.0, [0.0], [[0.0]], 0.3, [0.0])
    h0 = tr.hamiltonian(0.0, [0.0], [[0.0]], 0.3, [0.0])
    assert h1 - h0 <= -1.0
    assert tr.sample(0.3, np.zeros(1))["c"].min() == pytest.approx(2.0)


def test_exp_transform_conjugation_identity():
    rng = np.random.default_rng(2)
    a = random_ellipticity_matrices(rng, 1, 0.5, 4).reshape(2, 2, 1, 1)
    b = rng.uniform(-1, 1, (2, 2, 1))
    cc = rng.uniform(0, 1, (2, 2))
    f = rng.uniform(-1, 1, (2, 2))
    coeffs = IsaacsCoefficients(a, b, cc, f)
    c, t = 1.7, 0.4
    tr = exp_transform(coeffs, c)
    u0, p, X = 0.8, np.array([0.3]), np.array([[-1.2]])
    e = np.exp(-c * t)
    lhs = tr.hamiltonian(u0, p, X, t, [0.0])
    rhs = np.exp(c * t) * coeffs.hamiltonian(e * u0, e * p, e * X, t, [0.0]) - c * u0
    assert lhs == pytest.approx(rhs, abs=1e-12)
    data = exp_transform_data(lambda t, x: 2.0 + 0 * t, c)
    assert data(1.0, np.zeros(1)) == pytest.approx(2 * np.exp(c))


def test_exp_transform_rejects_hook_operators():
    coeffs = IsaacsCoefficients(np.ones((1, 1, 1, 1)), lower=lambda u0, p, t, x: np.zeros((1, 1)))
    with pytest.raises(UnsupportedFormError):
        exp_transform(coeffs, 1.0)


def test_validate_structure_constant_coefficients_pass():
    coeffs = IsaacsCoefficients(np.ones((1, 1, 1, 1)), f=[[0.5]], K0=1.0)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 1, (50, 1)), rng.uniform(0, 1, (50, 1))
    rep = validate_structure(coeffs, rng.uniform(0, 1, 50), x, y, rng.uniform(-1, 1, (8, 2)), 0.5, 0.4)
    assert rep.passed
    assert rep.holder_quotient == 0.0


def test_validate_structure_lipschitz_bound():
    L = 0.2
    a = SamplerField(lambda t, x: (0.8 + L * x[..., 0])[None, None, ..., None, None], (1, 1), (1, 1))
    coeffs = IsaacsCoefficients(a, K0=1.0, Hbar=0.0)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 1, (200, 1)), rng.uniform(0, 1, (200, 1))
    gamma = 0.4
    rep = validate_structure(coeffs, np.zeros(200), x, y, np.zeros((1, 2)), 0.5, gamma)
    assert rep.holder_quotient <= L * 1.0 ** (1 - gamma) + 1e-12
    assert rep.passed


def test_validate_structure_flags_negative_discount():
    coeffs = IsaacsCoefficients(np.ones((1, 1, 1, 1)), c=[[-0.1]], K0=1.0)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (10, 1))
    rep = validate_structure(coeffs, np.zeros(10), x, x, np.zeros((1, 2)), 0.5, 0.4)
    assert not rep.passed
    assert any("monotonicity" in v for v in rep.violations)


def test_validate_structure_flags_ellipticity():
    coeffs = IsaacsCoefficients(np.full((1, 1, 1, 1), 3.0), K0=1.0)
    x = np.zeros((4, 1))
    rep = validate_structure(coeffs, np.zeros(4), x, x, np.zeros((1, 2)), 0.5, 0.4)
    assert rep.ellipticity_margin < 0 and not rep.passed


def test_mixture_is_weighted_sum():
    p1 = IsaacsCoefficients(np.ones((1, 1, 1, 1)), f=[[1.0]])
    p2 = IsaacsCoefficients(np.ones((1, 1, 1, 1)), f=[[-1.0]])
    w1 = lambda t, x: 0.25 + 0 * t  # noqa: E731
    w2 = lambda t, x: 0.75 + 0 * t  # noqa: E731
    mix = MixedIsaacs([p1, p2], [w1, w2])
    val = mix.hamiltonian(0.0, np.zeros(1), np.array([[2.0]]), 0.0, np.zeros(1))
    assert val == pytest.approx(2.0 + 0.25 - 0.75)
    tr = exp_transform(mix, 1.0)
    assert isinstance(tr, MixedIsaacs)
