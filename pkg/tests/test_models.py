import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochwave.models import (UnsupportedCorrection, fitzhugh_nagumo, ito_stratonovich_correction,
                              nagumo)

MODELS = [nagumo(0.25), nagumo(0.4, rho=2.0), fitzhugh_nagumo()]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_equilibria_residual(model):
    assert model.equilibrium_residual(0.5) <= 1e-12


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_jacobians_match_finite_differences(model, rng):
    n, N = model.n, 7
    U = rng.uniform(-0.5, 1.5, (n, N))
    V = rng.standard_normal((n, N))
    h = 1e-6
    fd = (model.f(U + h * V) - model.f(U - h * V)) / (2 * h)
    an = np.einsum("ijx,jx->ix", model.Df(U), V)
    np.testing.assert_allclose(an, fd, rtol=1e-5, atol=1e-8)
    fd2 = (np.einsum("ijx,jx->ix", model.Df(U + h * V), V)
           - np.einsum("ijx,jx->ix", model.Df(U - h * V), V)) / (2 * h)
    np.testing.assert_allclose(model.D2f(U, V, V), fd2, rtol=1e-5, atol=1e-8)
    W = rng.standard_normal((model.m, N))
    fdg = (np.einsum("ijx,jx->ix", model.g(U + h * V), W)
           - np.einsum("ijx,jx->ix", model.g(U - h * V), W)) / (2 * h)
    np.testing.assert_allclose(np.einsum("ijx,jx->ix", model.Dg(U, V), W), fdg, rtol=1e-5, atol=1e-8)


def test_nagumo_stratonovich_correction_closed_form():
    u = np.linspace(-0.2, 1.2, 15)[None]
    h = ito_stratonovich_correction(nagumo(0.25), u, 0.5)
    np.testing.assert_allclose(h, 0.25 * (1 - 2 * u) * u * (1 - u), atol=1e-15)


def test_correction_vanishes_for_constant_g():
    m = nagumo(0.25)
    const = dataclasses.replace(m, g=lambda U: np.ones_like(U)[..., :, None, :],
                                dg=lambda U: np.zeros_like(U)[..., :, None, None, :])
    assert np.all(ito_stratonovich_correction(const, np.linspace(0, 1, 9)[None], 0.5) == 0)


def test_fhn_correction_second_component_zero():
    U = np.random.default_rng(0).standard_normal((2, 11))
    h = ito_stratonovich_correction(fitzhugh_nagumo(), U, (0.5, 0.5))
    np.testing.assert_allclose(h[0], 0.25 * U[0])
    assert np.all(h[1] == 0)


def test_non_diagonal_coupling_rejected():
    m = fitzhugh_nagumo()

    def g(U):
        G = np.zeros(U.shape[:-2] + (2, 2) + U.shape[-1:])
        G[..., 0, 1, :] = U[..., 0, :]
        return G

    with pytest.raises(UnsupportedCorrection):
        ito_stratonovich_correction(dataclasses.replace(m, g=g), np.ones((2, 5)), 0.5)


def test_mu_switch_and_hash():
    m = nagumo(0.25)
    s = m.with_mu(1)
    assert s.mu == 1 and m.mu == 0
    assert s.model_hash() != m.model_hash()
    u = np.linspace(0, 1, 5)[None]
    assert np.all(m.h(u, 0.5) == 0)
    np.testing.assert_allclose(s.h(u, 0.5), ito_stratonovich_correction(m, u, 0.5))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.1, 5.0))
def test_nagumo_equilibria_for_any_detuning(a, rho):
    assert nagumo(a, rho).equilibrium_residual(0.5) <= 1e-12


def test_invalid_detuning():
    for a in (0.0, 1.0, -0.3, 1.5):
        with pytest.raises(ValueError):
            nagumo(a)
