import json

import numpy as np
import pytest

from sigchar.diffusion import bm, constant_coefficient, lift_generalized_signature
from sigchar.levy_closed_form import levy_cf_conditional_closed, random_skew
from sigchar.pde_verify import (
    Stencil,
    embed_state,
    general_pde_terms,
    general_residual_grid,
    generator_apply,
    lambda_coefficients,
    levy_pde_terms,
    levy_residual_grid,
    reduced_coordinates,
    residual_general_pde,
    residual_levy_pde,
)
from sigchar.tensor_algebra import LinearFunctional

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def closed(A):
    return lambda t, w: levy_cf_conditional_closed(t, w, A)


def wrong_candidate(A):
    """The closed form with cosh and tanh swapped for cos and tan."""
    from sigchar.levy_closed_form import skew_canonical_decomposition

    f = skew_canonical_decomposition(A)

    def g(t, w):
        z = f.O @ np.asarray(w)
        pair = z[0::2][: f.d1] ** 2 + z[1::2][: f.d1] ** 2
        return np.prod(1 / np.cos(f.eta * t / 2)) * np.exp(np.sum(-(f.eta / 4) * np.tan(f.eta * t / 2) * pair))

    return g


def test_stencil_validation():
    with pytest.raises(ValueError):
        Stencil(0.0, 1e-3)
    assert Stencil(1e-3, 2e-3).halved() == Stencil(5e-4, 1e-3)


def test_generator_linear_function():
    c = np.array([1.0, -2.0, 0.5])
    mu = np.array([0.3, 0.1, -0.7])
    b = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 4.0]])
    val = generator_apply(lambda x: c @ x, mu, b, np.array([0.2, -0.4, 1.1]))
    assert val == pytest.approx(mu @ c, abs=1e-9)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_generator_square_norm(d):
    val = generator_apply(lambda x: x @ x, np.zeros(d), np.eye(d), np.linspace(-1, 1, d))
    assert val == pytest.approx(d, abs=1e-7)


def test_generator_exponential_second_order():
    c = np.array([0.4, -0.3])
    mu = np.array([0.2, 0.5])
    b = np.array([[1.0, 0.4], [0.4, 2.0]])
    x = np.array([0.1, 0.3])
    exact = (mu @ c + 0.5 * c @ b @ c) * np.exp(c @ x)
    f = lambda y: np.exp(c @ y)
    e1 = abs(generator_apply(f, mu, b, x, Stencil(1e-2, 1e-2)) - exact)
    e2 = abs(generator_apply(f, mu, b, x, Stencil(5e-3, 5e-3)) - exact)
    assert e1 < 1e-4
    assert 3.0 < e1 / e2 < 5.0


def test_levy_constant_function_zero_lambda():
    assert residual_levy_pde(0.5, [0.3, 0.2], np.zeros((2, 2)), lambda t, w: 1.0) == 0.0


@pytest.mark.parametrize("d, seed", [(2, None), (3, 0), (4, 1)])
def test_closed_form_solves_levy_pde(d, seed):
    A = ROT if seed is None else random_skew(np.random.default_rng(seed), d, scale=1.0)
    rep = levy_residual_grid(A, closed(A), values=(-1.0, 0.0, 1.0) if d < 4 else (-1.0, 1.0))
    assert rep.max_abs <= 1e-5
    # terms sum to the residual at every point
    total = sum(rep.terms.values())
    np.testing.assert_allclose(total, rep.residuals, atol=1e-13)


def test_levy_residual_convergence_order():
    a = levy_residual_grid(ROT, closed(ROT), st=Stencil())
    b = levy_residual_grid(ROT, closed(ROT), st=Stencil().halved())
    assert 3.0 <= a.max_abs / b.max_abs <= 5.0


def test_negative_control_fails():
    assert levy_residual_grid(ROT, wrong_candidate(ROT)).max_abs > 1e-2


def test_report_json():
    rep = levy_residual_grid(ROT, closed(ROT), times=(0.5,), values=(0.0, 1.0))
    obj = json.loads(rep.to_json())
    assert obj["n_points"] == 4
    assert set(obj["terms_max_abs"]) == {"time", "generator", "lambda_linear", "lambda_quadratic"}
    assert obj["max_abs_residual"] == pytest.approx(rep.max_abs)


# --------------------------------------------------------------------------
# general PDE


def test_reduced_coordinates():
    assert reduced_coordinates(2, 2) == slice(1, 3)
    assert reduced_coordinates(3, 1) == slice(1, 1)
    np.testing.assert_array_equal(embed_state([0.5, 0.7], 2, 2), [1.0, 0.5, 0.7, 0, 0, 0, 0])


@pytest.mark.parametrize("seed", range(6))
def test_levy_reduction_identities(seed):
    rng = np.random.default_rng(seed)
    d = 2 + seed % 3
    A = random_skew(rng, d)
    w = rng.uniform(-1, 1, d)
    L = lift_generalized_signature(bm(d), 2)
    lam = LinearFunctional.from_levels([0.0, np.zeros(d), 0.5 * A], d)
    m_mu, m_b, quad = lambda_coefficients(L, lam, w)
    assert abs(m_mu) <= 1e-12
    np.testing.assert_allclose(m_b, 0.5 * w @ A, atol=1e-12)
    assert quad == pytest.approx(0.25 * w @ A @ A.T @ w, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_general_pde_reduces_to_levy_pde_termwise(seed):
    rng = np.random.default_rng(50 + seed)
    d = 2 + seed
    A = random_skew(rng, d, scale=1.0)
    w = rng.uniform(-1, 1, d)
    L = lift_generalized_signature(bm(d), 2)
    lam = LinearFunctional.from_levels([0.0, np.zeros(d), 0.5 * A], d)
    f = closed(A)
    gen = general_pde_terms(L, lam, f, 0.7, w)
    lev = levy_pde_terms(0.7, w, A, f)
    for k in lev:
        assert gen[k] == pytest.approx(lev[k], abs=1e-10)
    assert abs(residual_general_pde(L, lam, f, (0.7, w))) <= 1e-5


def test_general_zero_functional_constant():
    L = lift_generalized_signature(constant_coefficient([0.2, -0.1], [[1.0, 0.3], [0.0, 0.5]]), 3)
    lam = LinearFunctional.zero(2, 3)
    y = np.linspace(-0.5, 0.5, reduced_coordinates(2, 3).stop - 1)
    assert residual_general_pde(L, lam, lambda t, z: 1.0, (0.4, y)) == 0.0


@pytest.mark.parametrize("u", [(0.5, -1.0), (1.5, 0.2)])
def test_gaussian_level_one(u):
    u = np.array(u)
    L = lift_generalized_signature(bm(2), 1)
    lam = LinearFunctional.from_levels([0.0, u], 2, 1)
    f = lambda t, y: np.exp(-t * (u @ u) / 2)
    rep = general_residual_grid(L, lam, f, [(t, np.zeros(0)) for t in (0.2, 0.5, 1.0)])
    assert rep.max_abs <= 1e-6


def test_general_state_shape_checked():
    L = lift_generalized_signature(bm(2), 2)
    with pytest.raises(ValueError):
        general_pde_terms(L, LinearFunctional.zero(2, 2), lambda t, y: 1.0, 0.5, np.zeros(3))
    with pytest.raises(ValueError):
        lambda_coefficients(L, LinearFunctional.zero(2, 3), np.zeros(2))
