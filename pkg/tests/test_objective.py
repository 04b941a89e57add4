import numpy as np
import pytest

from _oracles import GRAD_PATHS, gradient_case, gradient_error
from eve_neuron.ar import ArConfig
from eve_neuron.controllers import BandConfig, UnitBand
from eve_neuron.layer import EveLayer
from eve_neuron.objective import ObjectiveContext, evaluate_batch


def _ctx(regime="projOFF", mode="off", beta=0.0, alpha=0.1, n=3, bands=None):
    return ObjectiveContext(BandConfig(regime=regime), ArConfig(mode=mode, alpha=alpha), bands,
                            np.full(n, 0.5), beta=beta)


@pytest.mark.parametrize("path", list(GRAD_PATHS))
@pytest.mark.parametrize("train", [True, False])
def test_gradients_match_finite_differences(path, train):
    for seed in range(3):
        assert gradient_error(path, seed, train=train) < 1e-4


def test_oracle_detects_a_wrong_gradient():
    layer, x, y, ctx, eps = gradient_case("kl_std", 0)
    res = evaluate_batch(layer, x, y, ctx, eps=eps)
    res.grads["enc_bias"] *= 1.01
    from _oracles import central_fd, max_rel_err

    fd = central_fd(lambda: evaluate_batch(layer, x, y, ctx, eps=eps, with_grads=False).terms.total,
                    {"enc_bias": layer.enc_bias})
    assert max_rel_err(res.grads, fd) > 1e-3


def test_stop_gradient_prev_drops_only_the_previous_step_term():
    layer, x, y, ctx, eps = gradient_case("kl_ar_prior", 1)
    full = evaluate_batch(layer, x, y, ctx, eps=eps).grads
    ctx.ar = ArConfig(mode="prior", alpha=ctx.ar.alpha, sigma=ctx.ar.sigma, stop_gradient_prev=True)
    stopped = evaluate_batch(layer, x, y, ctx, eps=eps).grads
    assert np.array_equal(full["readout_weights"], stopped["readout_weights"])
    assert not np.allclose(full["enc_weights"], stopped["enc_weights"])


def test_zero_weights_reduce_to_mse():
    layer, x, y, _, eps = gradient_case("task", 2)
    res = evaluate_batch(layer, x, y, _ctx(), eps=eps)
    assert res.terms.total == res.stats["mse"]


def test_perfect_fit_zero_loss_and_zero_gradient():
    layer = EveLayer.init(3, 2, 1, np.random.default_rng(0), temporal=True, sigma_init=1.0)
    layer.enc_weights[:] = 0
    layer.enc_bias[:] = 0
    layer.raw_sigma[:] = layer.raw_sigma  # sigma = 1 up to the floor
    layer.readout_bias[:] = 0.0
    x = np.random.default_rng(1).normal(size=(4, 5, 2))
    y = np.zeros((4, 1))
    res = evaluate_batch(layer, x, y, _ctx(beta=0.0), train=False)
    assert res.terms.total == 0.0
    for g in res.grads.values():
        assert np.all(g == 0.0)


def test_components_sum_and_constraint_energy():
    for path in GRAD_PATHS:
        layer, x, y, ctx, eps = gradient_case(path, 4)
        t = evaluate_batch(layer, x, y, ctx, eps=eps).terms
        assert abs(t.total - sum(t.components().values())) <= 1e-12
        assert abs(t.constraint_energy - (t.total - t.task)) <= 1e-12


def test_band_reported_but_unweighted_outside_homeo():
    bands = UnitBand(np.full(3, 5.0), np.full(3, 6.0))
    layer, x, y, _, eps = gradient_case("task", 5)
    res = evaluate_batch(layer, x, y, _ctx("projOFF", bands=bands), eps=eps)
    assert res.stats["band_penalty"] > 0
    assert res.terms.band == 0.0
    assert res.stats["frac_low"] == 1.0


def test_mode_off_equals_alpha_zero():
    layer, x, y, _, eps = gradient_case("task", 6)
    a = evaluate_batch(layer, x, y, _ctx(mode="off", alpha=0.7, beta=0.1), eps=eps)
    b = evaluate_batch(layer, x, y, _ctx(mode="penalty", alpha=0.0, beta=0.1), eps=eps)
    assert a.terms.total == b.terms.total
    assert a.stats["ar_share"] == 0.0
    assert a.stats["l_ar"] > 0


def test_ar_share_exact_ratio():
    layer, x, y, ctx, eps = gradient_case("ar_penalty", 7)
    res = evaluate_batch(layer, x, y, ctx, eps=eps, with_grads=False)
    assert res.stats["ar_share"] == ctx.alpha_ar * res.terms.l_ar / res.terms.total
    shares = [res.terms.task, res.terms.kl, res.terms.ar, res.terms.band]
    assert sum(s / res.terms.total for s in shares) == pytest.approx(1.0, abs=1e-12)


def test_deterministic_layer_has_no_latent_stats():
    layer = EveLayer.init(3, 2, 1, np.random.default_rng(0), temporal=True, stochastic=False)
    x = np.random.default_rng(1).normal(size=(4, 5, 2))
    res = evaluate_batch(layer, x, np.zeros((4, 1)), _ctx(beta=0.5), train=True, rng=np.random.default_rng(0))
    assert "kl_mean" not in res.stats and "out" not in res.stats
    assert "raw_sigma" not in res.grads
    assert res.terms.total == res.stats["mse"]


def test_training_pass_needs_noise():
    layer, x, y, ctx, _ = gradient_case("task", 0)
    with pytest.raises(ValueError):
        evaluate_batch(layer, x, y, ctx, train=True)


def test_reparam_proxy_at_sigma_floor():
    layer, x, y, ctx, _ = gradient_case("task", 0)
    layer.raw_sigma[:] = -60
    res = evaluate_batch(layer, x, y, ctx, train=False, diag_rng=np.random.default_rng(0), with_grads=False)
    assert res.stats["reparam_proxy"] <= layer.sigma_floor * np.sqrt(2 / np.pi) * 3
