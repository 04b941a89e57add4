import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import mc_kl
from eve_neuron.ar import (
    ArConfig,
    ar_penalty,
    ar_penalty_grad,
    ar_prior_kl,
    ar_residuals,
    ar_share,
    lag_autocorr,
    phi_from_tau,
    sample_taus,
)
from eve_neuron.gaussian import kl_std_normal


def test_phi_reference_values():
    assert phi_from_tau(1.0) == pytest.approx(0.36788, abs=1e-5)
    assert phi_from_tau(2.0) == pytest.approx(0.60653, abs=1e-5)
    assert phi_from_tau(1e9) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        phi_from_tau(0.0)


@given(st.floats(0.01, 1e4))
def test_phi_in_unit_interval(tau):
    assert 0 < phi_from_tau(tau) < 1 or phi_from_tau(tau) == pytest.approx(1.0)


def test_sample_taus_range_and_replay():
    cfg = ArConfig()
    a = sample_taus(cfg, 1000, np.random.default_rng(0))
    b = sample_taus(cfg, 1000, np.random.default_rng(0))
    assert np.array_equal(a, b)
    assert a.min() >= 1 and a.max() <= 8


def test_ar_config_validation():
    with pytest.raises(ValueError):
        ArConfig(mode="sometimes")
    with pytest.raises(ValueError):
        ArConfig(stride=0)
    with pytest.raises(ValueError):
        ArConfig(alpha=-1.0)
    assert ArConfig(mode="off", alpha=3.0).penalty_weight == 0.0
    assert ArConfig(mode="prior", alpha=3.0).penalty_weight == 0.0
    assert ArConfig(mode="penalty", alpha=3.0).penalty_weight == 3.0


def test_ar_prior_kl_reference():
    phi = 0.6065
    expected = 0.5 * ((0.25 + (1 - phi) ** 2) / 0.25 - 1)
    assert ar_prior_kl(1.0, 0.5, 1.0, phi, 0.5) == pytest.approx(expected, rel=1e-12)
    assert ar_prior_kl(1.0, 0.5, 1.0, phi, 0.5) == pytest.approx(0.3097, abs=1e-4)
    mc = mc_kl(1.0, 0.5, phi * 1.0, 0.5, 10**6, np.random.default_rng(0))
    assert ar_prior_kl(1.0, 0.5, 1.0, phi, 0.5) == pytest.approx(mc, abs=1e-2)


@given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(-3, 3))
def test_ar_prior_kl_reductions(mu, sigma, prev):
    assert ar_prior_kl(mu, sigma, prev, 0.0, 1.0) == pytest.approx(kl_std_normal(mu, sigma), rel=1e-12, abs=1e-15)
    assert abs(ar_prior_kl(0.7 * prev, 0.8, prev, 0.7, 0.8)) < 1e-12


def test_ar_penalty_reference():
    assert ar_penalty(np.array([1.0, 0.0]), 0.5) == 0.25
    assert ar_penalty(np.full((7, 3), 2.5), np.ones(3)) == 0.0
    assert ar_penalty(np.zeros((2, 6, 3)), np.array([0.1, 0.5, 0.9]), stride=2) == 0.0


def test_ar_residuals_stride():
    seq = np.arange(6, dtype=float)
    r = ar_residuals(seq, 1.0, stride=2)
    assert np.allclose(r.ravel(), 2.0)
    with pytest.raises(ValueError, match="window too short"):
        ar_residuals(seq[:2], 1.0, stride=2)


@given(arrays(float, (2, 5, 3), elements=st.floats(-3, 3)), st.integers(1, 3))
def test_ar_penalty_grad_matches_finite_differences(seq, stride):
    phi = np.array([0.2, 0.6, 0.95])
    g = ar_penalty_grad(seq, phi, stride)
    h = 1e-6
    for idx in np.ndindex(seq.shape):
        up, down = seq.copy(), seq.copy()
        up[idx] += h
        down[idx] -= h
        fd = (ar_penalty(up, phi, stride) - ar_penalty(down, phi, stride)) / (2 * h)
        assert g[idx] == pytest.approx(fd, abs=1e-6)


def test_ar_share():
    assert ar_share(1.0, 0.1, 0.4) == 0.25
    assert ar_share(0.0, 0.3, 1.0) == 0.0
    with pytest.raises(ValueError):
        ar_share(1.0, 0.1, 0.0)


def test_lag_autocorr_recovers_ar1_coefficient():
    rng = np.random.default_rng(0)
    phi = 0.9
    s = np.zeros(10**4)
    for t in range(1, len(s)):
        s[t] = phi * s[t - 1] + rng.standard_normal()
    assert lag_autocorr(s) == pytest.approx(0.9, abs=0.02)


def test_lag_autocorr_alternating_sign():
    seq = np.tile([1.0, -1.0], 20)
    assert lag_autocorr(seq) == pytest.approx(-1.0, abs=0.05)
    assert math.isnan(lag_autocorr(np.ones(10))) or lag_autocorr(np.ones(10)) == 0.0
