import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eve_neuron.layer import ArPrior, EveLayer, kl_eff, kl_mean, layer_kl


def _layer(n=4, d=3, o=2, temporal=False, seed=0, **kw):
    return EveLayer.init(n, d, o, np.random.default_rng(seed), temporal=temporal, **kw)


def test_zero_encoder_gives_zero_output():
    layer = _layer(1, 3, 1)
    layer.enc_weights[:] = 0
    layer.readout_weights[:] = 1
    layer.raw_sigma[:] = -60
    h = np.random.default_rng(1).normal(size=(5, 3))
    y = layer.forward(h, np.random.default_rng(2)).y_hat
    assert np.all(np.abs(y) < 1e-3)


def test_readout_reference_value():
    layer = _layer(4, 1, 1)
    layer.enc_weights[:] = 0
    layer.enc_bias[:] = 1.0
    layer.readout_weights[:] = 1.0
    y = layer.forward(np.zeros((1, 1)), readout_source="mean_mu").y_hat
    assert y[0, 0] == pytest.approx(2.0)


def test_mean_and_sample_readout_agree_at_floor():
    layer = _layer(5, 3, 2, temporal=True)
    layer.raw_sigma[:] = -60
    h = np.random.default_rng(3).normal(size=(8, 6, 3))
    a = layer.forward(h, np.random.default_rng(4), readout_source="sample_z").y_hat
    b = layer.forward(h, readout_source="mean_mu").y_hat
    assert np.max(np.abs(a - b)) < 1e-2


def test_deterministic_forward_matches_mean_readout():
    layer = _layer(6, 3, 2, temporal=True)
    h = np.random.default_rng(5).normal(size=(4, 5, 3))
    assert np.allclose(layer.deterministic_forward(h), layer.forward(h, readout_source="mean_mu").y_hat, atol=1e-12)


def test_baseline_parameter_count():
    eve = _layer(7, 3, 2, temporal=True)
    det = EveLayer.init(7, 3, 2, np.random.default_rng(0), temporal=True, stochastic=False)
    assert det.n_params() == eve.n_params() - 7
    assert not det.stochastic
    with pytest.raises(ValueError):
        det.forward(np.zeros((1, 2, 3)), np.random.default_rng(0))


def test_forward_shape_validation():
    layer = _layer(3, 4, 1)
    with pytest.raises(ValueError, match="D=4"):
        layer.forward(np.zeros((2, 5)), np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer.forward(np.zeros((2, 4)), None, readout_source="sample_z")


def test_forward_nonfinite_raises():
    layer = _layer(3, 2, 1)
    layer.enc_weights[:] = np.inf
    with pytest.raises((FloatingPointError, ValueError)):
        layer.forward(np.ones((1, 2)), np.random.default_rng(0))


def test_sigma_positive_and_frozen_excluded():
    layer = _layer(3, 2, 1, freeze_sigma=True)
    assert np.all(layer.sigma > 0)
    assert "raw_sigma" not in layer.trainable()


def test_snapshot_load_roundtrip():
    layer = _layer(3, 2, 1)
    snap = layer.snapshot()
    layer.enc_weights += 1
    layer.load(snap)
    assert np.array_equal(layer.enc_weights, snap["enc_weights"])
    c = layer.copy()
    c.enc_bias += 5
    assert not np.array_equal(c.enc_bias, layer.enc_bias)


def test_layer_kl_ar_prior_first_step_standard():
    mu = np.random.default_rng(0).normal(size=(2, 4, 3))
    sigma = np.full(3, 0.7)
    prior = ArPrior(np.array([0.0, 0.0, 0.0]), 1.0)
    a = layer_kl(mu, sigma, prior, temporal=True)
    b = layer_kl(mu, sigma, "std", temporal=True)
    assert np.allclose(a, b)
    with pytest.raises(ValueError):
        layer_kl(mu[:, 0], sigma, prior, temporal=False)


def test_kl_mean_values():
    assert kl_mean(np.zeros(5)) == 0.0
    assert kl_mean([0.5] * 4) == 0.5
    v = np.random.default_rng(0).uniform(size=7)
    assert kl_mean(np.concatenate([v, v])) == pytest.approx(kl_mean(v), rel=1e-14)


def test_kl_eff_values():
    assert kl_eff([0.005, 0.02], 0.01) == pytest.approx(0.005)
    assert kl_eff([0.001, 0.002], 0.01) == 0.0
    v = [0.3, 0.1]
    assert kl_eff(v, 0.0) == kl_mean(v)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=20), st.floats(0, 1))
def test_kl_eff_bounded_by_kl_mean(kl, tau):
    assert kl_eff(kl, tau) <= kl_mean(kl) + 1e-12
