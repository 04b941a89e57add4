import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import mc_kl
from eve_neuron.gaussian import (
    SIGMA_FLOOR,
    ArPriorState,
    GaussianPosterior,
    inv_softplus,
    kl_gaussian,
    kl_std_normal,
    raw_from_sigma,
    reparam_proxy,
    reparameterize,
    sigma_from_raw,
    sigmoid,
    softplus,
)

mus = st.floats(-10, 10)
sigmas = st.floats(1e-3, 10)


def test_kl_std_normal_reference_values():
    assert kl_std_normal(0, 1) == 0.0
    assert kl_std_normal(1, 1) == pytest.approx(0.5, abs=1e-15)
    expected = 0.5 * (0.25 + 0.64 - math.log(0.64) - 1)
    assert kl_std_normal(0.5, 0.8) == pytest.approx(expected, rel=1e-14)
    assert kl_std_normal(0.5, 0.8) == pytest.approx(0.16814, abs=1e-5)


def test_kl_std_normal_against_monte_carlo():
    rng = np.random.default_rng(0)
    assert kl_std_normal(1, 1) == pytest.approx(mc_kl(1, 1, 0, 1, 10**6, rng), abs=1e-2)
    assert kl_std_normal(0.5, 0.8) == pytest.approx(mc_kl(0.5, 0.8, 0, 1, 10**6, rng), abs=1e-2)


def test_kl_gaussian_reference_values():
    assert kl_gaussian(0.3, 0.9, 0, 1) == pytest.approx(kl_std_normal(0.3, 0.9), rel=1e-14)
    expected = 0.5 * ((1 + 0.25) / 0.49 - 1 + math.log(0.49))
    assert kl_gaussian(1, 1, 0.5, 0.7) == pytest.approx(expected, rel=1e-14)
    assert kl_gaussian(1, 1, 0.5, 0.7) == pytest.approx(0.41884, abs=1e-5)
    rng = np.random.default_rng(1)
    assert kl_gaussian(1, 1, 0.5, 0.7) == pytest.approx(mc_kl(1, 1, 0.5, 0.7, 10**6, rng), abs=1e-2)


@given(mus, sigmas)
def test_kl_identical_is_zero(mu, sigma):
    assert abs(kl_gaussian(mu, sigma, mu, sigma)) < 1e-12


@given(mus, sigmas, mus, sigmas)
def test_kl_nonnegative(mq, sq, mp, sp):
    assert kl_gaussian(mq, sq, mp, sp) >= -1e-12
    assert kl_std_normal(mq, sq) >= -1e-12


@given(mus, sigmas, st.floats(-5, 5))
def test_kl_translation_invariant(mu, sigma, shift):
    a = kl_std_normal(mu, sigma)
    b = kl_gaussian(mu + shift, sigma, shift, 1.0)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


@given(st.floats(-3, 3), st.floats(0.2, 3))
def test_kl_mu_derivative_is_mu(mu, sigma):
    h = 1e-6
    fd = (kl_std_normal(mu + h, sigma) - kl_std_normal(mu - h, sigma)) / (2 * h)
    assert fd == pytest.approx(mu, abs=1e-6)


def test_kl_mu_derivative_reference():
    h = 1e-5
    fd = (kl_std_normal(0.5 + h, 1) - kl_std_normal(0.5 - h, 1)) / (2 * h)
    assert fd == pytest.approx(0.5, abs=1e-9)


def test_kl_vectorized_matches_scalar():
    mu = np.array([[0.1, -2.0], [1.5, 0.0]])
    sigma = np.array([0.5, 1.3])
    out = kl_std_normal(mu, sigma)
    assert out.shape == (2, 2)
    assert out[1, 0] == kl_std_normal(1.5, 0.5)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_kl_rejects_nonpositive_sigma(bad):
    with pytest.raises(ValueError, match="sigma must be positive"):
        kl_std_normal(0.0, bad)
    with pytest.raises(ValueError, match="sigma must be positive"):
        kl_gaussian(0.0, 1.0, 0.0, bad)


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_kl_rejects_nonfinite(bad):
    with pytest.raises(ValueError, match="non-finite"):
        kl_std_normal(bad, 1.0)
    with pytest.raises(ValueError, match="non-finite"):
        kl_gaussian(0.0, 1.0, bad, 1.0)


def test_reparameterize_zero_sigma_is_exact():
    z, eps = reparameterize(1.25, 0.0, np.random.default_rng(0))
    assert z == 1.25


def test_reparameterize_replay():
    a = reparameterize(0.0, 1.0, np.random.default_rng(42))
    b = reparameterize(0.0, 1.0, np.random.default_rng(42))
    assert a == b
    assert a[0] == np.random.default_rng(42).standard_normal()


def test_reparameterize_moments():
    z, _ = reparameterize(np.full(10**5, 2.0), 3.0, np.random.default_rng(3))
    se_mean = 3 / math.sqrt(len(z))
    se_std = 3 / math.sqrt(2 * len(z))
    assert abs(z.mean() - 2) < 3 * se_mean
    assert abs(z.std() - 3) < 3 * se_std


def test_reparameterize_rejects_negative_sigma():
    with pytest.raises(ValueError):
        reparameterize(0.0, -0.1, np.random.default_rng(0))


def test_posterior_draw_consistent():
    p = GaussianPosterior.draw(0.5, 2.0, np.random.default_rng(5))
    assert p.z == pytest.approx(p.mu + p.sigma * p.eps)


def test_ar_prior_state_mean():
    assert ArPriorState(0.5, 1.0, 2.0).mean == 1.0


def test_reparam_proxy_values():
    assert reparam_proxy([(0.3, 0.3), (1.0, 1.0)]) == 0.0
    assert reparam_proxy([(1.5, 1.0), (0.5, 1.0)]) == 0.5
    z, _ = reparameterize(np.zeros(10**5), 1.0, np.random.default_rng(9))
    pairs = np.stack([z, np.zeros_like(z)], axis=1)
    assert reparam_proxy(pairs) == pytest.approx(math.sqrt(2 / math.pi), abs=0.01)
    with pytest.raises(ValueError):
        reparam_proxy([])


@given(st.floats(-30, 30))
def test_softplus_inverse_roundtrip(x):
    y = softplus(x)
    if y > 1e-12:
        assert inv_softplus(y) == pytest.approx(x, rel=1e-7, abs=1e-7)


@settings(max_examples=50)
@given(st.floats(2e-4, 20))
def test_sigma_raw_roundtrip(sigma):
    assert sigma_from_raw(raw_from_sigma(sigma)) == pytest.approx(sigma, rel=1e-9)


def test_sigma_floor_and_sigmoid():
    assert sigma_from_raw(-800.0) == SIGMA_FLOOR
    assert sigmoid(0.0) == 0.5
    with pytest.raises(ValueError):
        raw_from_sigma(SIGMA_FLOOR)
