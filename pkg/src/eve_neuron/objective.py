"""Global training objective and its closed-form gradient.

L_total = MSE + beta * KL_mean + alpha_AR * L_AR (+ lambda_band * band in homeo)

The model is one affine encoder plus a linear readout, so the backward pass
is written out by hand. Sampling noise is cached in the forward pass and
reused by the backward pass (pathwise gradient).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ar import ArConfig, ar_penalty, ar_penalty_grad, lag_autocorr
from .controllers import (
    BandConfig,
    UnitBand,
    band_penalty,
    band_penalty_grad,
    estimate_mu2,
    out_fraction,
)
from .gaussian import sigmoid
from .layer import ArPrior, EveLayer, kl_eff, layer_kl


@dataclass
class ObjectiveContext:
    """Everything besides parameters and data that the loss depends on."""

    control: BandConfig
    ar: ArConfig
    bands: UnitBand | None
    phi: np.ndarray | None
    beta: float = 0.01
    kl_tau: float = 0.01

    @property
    def lambda_band(self) -> float:
        return self.control.penalty_weight

    @property
    def alpha_ar(self) -> float:
        return self.ar.penalty_weight

    def prior(self):
        if self.ar.mode == "prior":
            return ArPrior(self.phi, self.ar.sigma, self.ar.stop_gradient_prev)
        return "std"


@dataclass
class LossTerms:
    task: float
    kl: float
    ar: float
    band: float
    total: float
    kl_mean: float | None
    l_ar: float | None
    band_penalty: float | None

    @property
    def constraint_energy(self) -> float:
        return self.kl + self.ar + self.band

    def components(self) -> dict:
        return {"task": self.task, "kl": self.kl, "ar": self.ar, "band": self.band}


@dataclass
class BatchResult:
    terms: LossTerms
    y_hat: np.ndarray
    mu: np.ndarray
    z: np.ndarray | None
    eps: np.ndarray | None
    stats: dict
    grads: dict | None = None


def _mu3(layer: EveLayer, mu):
    return mu if layer.temporal else mu[:, None, :]


def evaluate_batch(layer: EveLayer, x, y, ctx: ObjectiveContext, *, train: bool = True,
                   rng: np.random.Generator | None = None, eps=None,
                   diag_rng: np.random.Generator | None = None,
                   with_grads: bool = True) -> BatchResult:
    """Loss, dashboard statistics and (optionally) gradients on one batch.

    train=True: readout over the sampled z (eps from ``eps`` or ``rng``).
    train=False: readout over mu; ``diag_rng`` draws the noise used only by
    the reparam proxy.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(x), -1)
    B, N = len(x), layer.n_units
    sqrt_n = np.sqrt(N)
    stochastic = layer.stochastic

    mu = layer.encode(x)
    mu3 = _mu3(layer, mu)
    T = mu3.shape[1]
    mu_last = mu3[:, -1, :]

    if stochastic:
        sigma = layer.sigma
        if train:
            if eps is None:
                if rng is None:
                    raise ValueError("training pass needs eps or an rng")
                eps = rng.standard_normal(mu_last.shape)
            z = mu_last + sigma * eps
            last = z
            proxy_eps = eps
        else:
            eps = None
            proxy_eps = diag_rng.standard_normal(mu_last.shape) if diag_rng is not None else None
            z = None
            last = mu_last
    else:
        sigma = z = eps = proxy_eps = None
        last = mu_last

    f = layer.features(mu, last)
    y_hat = layer.readout(f)
    resid = y_hat - y
    task = float(np.mean(resid * resid))
    mae = float(np.mean(np.abs(resid)))

    stats = {"mse": task, "mae": mae}
    kl_term = ar_term = band_term = 0.0
    kl_val = l_ar = band_val = None
    if stochastic:
        prior = ctx.prior()
        kl = layer_kl(mu3 if layer.temporal else mu3[:, 0, :], sigma, prior, layer.temporal)
        kl3 = kl if layer.temporal else kl[:, None, :]
        kl_unit = kl3.mean(axis=(0, 1))
        kl_val = float(np.mean(kl_unit))
        kl_term = ctx.beta * kl_val

        est = estimate_mu2(mu3)
        if ctx.bands is not None:
            band_val = band_penalty(est, ctx.bands)
            band_term = ctx.lambda_band * band_val
            frac_low, frac_high, out = out_fraction(est, ctx.bands)
        else:
            frac_low = frac_high = out = None

        if ctx.phi is not None and T > ctx.ar.stride:
            l_ar = ar_penalty(mu3, ctx.phi, ctx.ar.stride)
            ar_term = ctx.alpha_ar * l_ar
        elif ctx.alpha_ar > 0:
            raise ValueError("window too short for stride")

        stats.update(kl_mean=kl_val, kl_eff=kl_eff(kl_unit, ctx.kl_tau), kl_sum=float(np.sum(kl_unit)),
                     mu2_mean=est.mean, frac_low=frac_low, frac_high=frac_high, out=out,
                     band_penalty=band_val, l_ar=l_ar,
                     reparam_proxy=None if proxy_eps is None else float(np.mean(np.abs(sigma * proxy_eps))),
                     mu_acf=lag_autocorr(mu3, ctx.ar.stride) if T > ctx.ar.stride else None)

    total = task + kl_term + ar_term + band_term
    terms = LossTerms(task, kl_term, ar_term, band_term, total, kl_val, l_ar, band_val)
    stats.update(loss_total=total, loss_task=task)
    if stochastic:
        stats.update(loss_kl=kl_term, loss_ar=ar_term, loss_band=band_term)
        stats["constraint_energy"] = terms.constraint_energy
        stats["ar_share"] = (ar_term / total) if total > 0 else 0.0
    result = BatchResult(terms, y_hat, mu, z, eps, stats)
    if not with_grads:
        return result

    # backward
    G = 2.0 * resid / resid.size
    grads = {"readout_weights": G.T @ f / sqrt_n, "readout_bias": G.sum(axis=0)}
    df = G @ layer.readout_weights / sqrt_n
    dmu3 = np.zeros_like(mu3)
    dmu3[:, -1, :] += df[:, :N]
    if layer.temporal:
        dmu3 += df[:, None, N:] / T
    dsigma = None
    if stochastic:
        dsigma = np.zeros(N)
        if train:
            dsigma += np.sum(df[:, :N] * eps, axis=0)
        # KL term; kl_mean averages over B * T * N elements
        scale = ctx.beta / (B * T * N)
        if isinstance(ctx.prior(), ArPrior):
            var_ar = ctx.ar.sigma ** 2
            dmu3[:, :1, :] += scale * mu3[:, :1, :]
            d = mu3[:, 1:, :] - ctx.phi * mu3[:, :-1, :]
            dmu3[:, 1:, :] += scale * d / var_ar
            if not ctx.ar.stop_gradient_prev:
                dmu3[:, :-1, :] -= scale * ctx.phi * d / var_ar
            dsigma += scale * B * (sigma - 1.0 / sigma)
            dsigma += scale * B * (T - 1) * (sigma / var_ar - 1.0 / sigma)
        else:
            dmu3 += scale * mu3
            dsigma += scale * B * T * (sigma - 1.0 / sigma)
        if ctx.lambda_band > 0 and ctx.bands is not None:
            dm = band_penalty_grad(est, ctx.bands) * ctx.lambda_band
            dmu3 += dm * 2.0 * mu3 / (B * T)
        if ctx.alpha_ar > 0 and l_ar is not None:
            dmu3 += ctx.alpha_ar * ar_penalty_grad(mu3, ctx.phi, ctx.ar.stride)

    dmu_flat = dmu3.reshape(-1, N)
    x_flat = x.reshape(-1, layer.input_dim)
    grads["enc_weights"] = dmu_flat.T @ x_flat
    grads["enc_bias"] = dmu_flat.sum(axis=0)
    if stochastic:
        grads["raw_sigma"] = dsigma * sigmoid(layer.raw_sigma)
    result.grads = grads
    return result
