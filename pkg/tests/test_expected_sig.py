from math import factorial

import numpy as np
import pytest

from oracles import from_dict, shuffle_functionals, to_dict
from sigchar.charfn_mc import start_tensor
from sigchar.expected_sig import (
    SeriesTooLargeError,
    expected_signature_const_coeff,
    moment_polynomials,
    recursion_rhs,
    taylor_cf,
)
from sigchar.levy_closed_form import levy_cf_conditional_closed, random_skew
from sigchar.tensor_algebra import LinearFunctional, TruncatedTensor, dim_truncated, tensor_exp

SECH_HALF = 0.886818883970073908658897797783
ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def generator_tensor(mu, b, n):
    d = len(mu)
    return TruncatedTensor.from_levels([0.0, np.asarray(mu), 0.5 * np.asarray(b)], d, n)


def levy_functional(lam0, n=2):
    return LinearFunctional.from_levels([0.0, np.zeros(2), 0.5 * lam0 * ROT], 2, n)


def test_bm_degree_two_and_odd_degrees():
    s = expected_signature_const_coeff(np.zeros(3), np.eye(3), 5)
    for t in (0.3, 1.7):
        np.testing.assert_allclose(s.degree(2, t), 0.5 * t * np.eye(3), atol=1e-15)
        for m in (1, 3, 5):
            np.testing.assert_array_equal(s.degree(m, t), 0.0)


def test_initial_values():
    rng = np.random.default_rng(0)
    sig = rng.standard_normal((2, 2))
    s = expected_signature_const_coeff(rng.standard_normal(2), sig @ sig.T, 4)
    assert s.degree(0, 3.0) == 1.0
    for m in range(1, 5):
        np.testing.assert_array_equal(s.degree(m, 0.0), 0.0)


def test_deterministic_line():
    c = np.array([0.5, -1.0, 0.25])
    s = expected_signature_const_coeff(c, np.zeros((3, 3)), 4)
    assert s.evaluate(1.3).allclose(tensor_exp(TruncatedTensor.degree_one(1.3 * c, 4)), atol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("n", [1, 4, 6])
def test_matches_tensor_exponential(d, n):
    rng = np.random.default_rng(d * 7 + n)
    mu = rng.uniform(-1, 1, d)
    sig = rng.uniform(-1, 1, (d, d))
    b = sig @ sig.T
    s = expected_signature_const_coeff(mu, b, n)
    for t in (0.5, 1.0):
        ref = tensor_exp(t * generator_tensor(mu, b, n))
        assert np.max(np.abs(s.evaluate(t).coeffs - ref.coeffs)) <= 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_polynomial_derivative_satisfies_recursion(seed):
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal(2)
    sig = rng.standard_normal((2, 3))
    s = expected_signature_const_coeff(mu, sig @ sig.T, 5)
    for t in (0.0, 0.4, 2.0):
        assert s.derivative(t).allclose(recursion_rhs(s, t), atol=1e-13)


def test_rejects_negative_degree_and_bad_b():
    with pytest.raises(ValueError):
        expected_signature_const_coeff([0.0], [[1.0]], -1)
    with pytest.raises(ValueError):
        expected_signature_const_coeff([0.0, 0.0], [[1.0]], 2)


def test_gaussian_second_moment_from_degree_two():
    u = np.array([0.3, -1.1, 0.6])
    t = 0.9
    s = expected_signature_const_coeff(np.zeros(3), np.eye(3), 2)
    f = {(i + 1,): u[i] for i in range(3)}
    sq = from_dict(shuffle_functionals(f, f), 3, 2)
    assert sq @ s.evaluate(t).coeffs == pytest.approx(t * u @ u, abs=1e-12)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_moments_match_shuffle_powers(m):
    """E[l(S)^m] = <l^{shuffle m}, Phi> with Phi taken to degree m*n."""
    rng = np.random.default_rng(m)
    d, n = 2, 2
    ell = rng.standard_normal(dim_truncated(d, n))
    ell[0] = 0.0
    mu = rng.uniform(-1, 1, d)
    sig = rng.uniform(-1, 1, (d, d))
    b = sig @ sig.T
    t = 0.7
    f = {w: c for w, c in to_dict(ell, d, n).items() if w}
    power = {(): 1.0}
    for _ in range(m):
        power = shuffle_functionals(power, f)
    big = expected_signature_const_coeff(mu, b, m * n).evaluate(t).coeffs
    expected = from_dict(power, d, m * n) @ big
    moments = moment_polynomials(ell, d, n, mu, b, m)
    got = moments[m] @ t ** np.arange(moments.shape[1])
    assert got == pytest.approx(expected, rel=1e-11, abs=1e-13)


def test_zero_functional_partial_sums_are_one():
    s = expected_signature_const_coeff(np.zeros(2), np.eye(2), 2)
    diag = taylor_cf(s, LinearFunctional.zero(2, 2), 1.0, m_max=6)
    np.testing.assert_array_equal(diag.partial_sums, 1.0)
    assert diag.converged


def test_sech_series_first_terms():
    lam0, t = 0.3, 1.0
    s = expected_signature_const_coeff(np.zeros(2), np.eye(2), 2)
    diag = taylor_cf(s, levy_functional(lam0), t, m_max=8)
    x = lam0 * t
    assert diag.terms[0] == 1.0
    assert abs(diag.terms[1]) < 1e-15 and abs(diag.terms[3]) < 1e-15
    assert diag.terms[2] == pytest.approx(-(x**2) / 8, rel=1e-12)
    assert diag.terms[4] == pytest.approx(5 * x**4 / 384, rel=1e-12)


@pytest.mark.parametrize("lam0", [0.2, 0.5, 1.0])
def test_taylor_reproduces_sech(lam0):
    s = expected_signature_const_coeff(np.zeros(2), np.eye(2), 2)
    diag = taylor_cf(s, levy_functional(lam0), 1.0, m_max=24)
    assert abs(diag.value - 1 / np.cosh(lam0 / 2)) <= 1e-6
    assert diag.converged
    if lam0 == 1.0:
        assert diag.value.real == pytest.approx(SECH_HALF, abs=1e-12)


def test_divergence_flagged():
    s = expected_signature_const_coeff(np.zeros(2), np.eye(2), 2)
    diag = taylor_cf(s, levy_functional(8.0), 1.0, m_max=24)
    assert not diag.converged
    assert diag.magnitudes[-1] > diag.magnitudes[10]
    # sech(x/2) has its nearest pole at x = pi, so the radius in units of |lambda| is pi/8
    assert diag.roc_estimate < diag.lambda_norm
    assert diag.roc_estimate / diag.lambda_norm == pytest.approx(np.pi / 8, rel=0.2)


def test_partial_sums_move_by_term_magnitude():
    s = expected_signature_const_coeff(np.zeros(2), np.eye(2), 2)
    diag = taylor_cf(s, levy_functional(1.0), 1.0, m_max=20)
    steps = np.abs(np.diff(diag.partial_sums))
    np.testing.assert_allclose(steps, diag.magnitudes[1:], rtol=1e-9, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_taylor_with_start_matches_conditional_closed_form(seed):
    rng = np.random.default_rng(seed)
    A = random_skew(rng, 2, scale=0.8)
    w = rng.uniform(-1, 1, 2)
    lam = LinearFunctional.from_levels([0.0, np.zeros(2), 0.5 * A], 2)
    s = expected_signature_const_coeff(np.zeros(2), np.eye(2), 2)
    diag = taylor_cf(s, lam, 0.8, m_max=24, start=start_tensor(w, 2))
    assert abs(diag.value - levy_cf_conditional_closed(0.8, w, A)) <= 1e-8


def test_gaussian_functional_series():
    u = np.array([0.4, -0.2])
    s = expected_signature_const_coeff(np.zeros(2), np.eye(2), 1)
    diag = taylor_cf(s, LinearFunctional.from_levels([0.0, u], 2, 1), 1.0, m_max=20)
    assert diag.value == pytest.approx(np.exp(-(u @ u) / 2), abs=1e-14)


def test_scalar_part_is_a_phase():
    s = expected_signature_const_coeff(np.zeros(2), np.eye(2), 2)
    lam = LinearFunctional.from_levels([0.3, np.zeros(2), 0.5 * ROT], 2)
    diag = taylor_cf(s, lam, 1.0, m_max=24)
    assert diag.value == pytest.approx(np.exp(0.3j) * SECH_HALF, abs=1e-10)


def test_input_validation():
    s = expected_signature_const_coeff(np.zeros(2), np.eye(2), 2)
    with pytest.raises(ValueError):
        taylor_cf(s, levy_functional(1.0), 1.0, m_max=0)
    with pytest.raises(ValueError):
        taylor_cf(s, LinearFunctional.zero(3, 2), 1.0)
    with pytest.raises(ValueError):
        moment_polynomials(np.ones(7), 2, 2, np.zeros(2), np.eye(2), 2)


def test_too_many_monomials_rejected():
    rng = np.random.default_rng(0)
    ell = rng.standard_normal(dim_truncated(3, 4))
    ell[0] = 0.0
    with pytest.raises(SeriesTooLargeError):
        moment_polynomials(ell, 3, 4, np.zeros(3), np.eye(3), 24)


def test_moment_coefficients_are_polynomials_in_t():
    """E[W_t^4] = 3 t^2 for one-dimensional BM."""
    ell = np.array([0.0, 1.0])
    c = moment_polynomials(ell, 1, 1, [0.0], [[1.0]], 4)
    np.testing.assert_allclose(c[4], [0, 0, 3, 0, 0], atol=1e-14)
    np.testing.assert_allclose(c[2][:3], [0, 1, 0], atol=1e-14)
    assert c[3].sum() == 0 and factorial(4) == 24
