"""Latent-energy budget: per-unit bands on E_h[mu_j(h)^2] and the three control regimes.

homeo    soft band penalty added to the loss, no parameter surgery
projON   multiplicative retraction of (a_j, b_j) after every optimizer update
projOFF  neither; the band is still evaluated for the dashboard
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

REGIMES = ("homeo", "projON", "projOFF")

# Relative slack on the band edges. A retracted unit sits on its bound up to
# rounding, so it must not count as a violation on re-estimation.
BAND_RTOL = 1e-9


@dataclass
class BandConfig:
    mu2_min: float = 0.01
    mu2_max: float = 0.25
    overlap: float = 0.5
    regime: str = "homeo"
    lambda_band: float = 1.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"control.regime must be one of {REGIMES}, got {self.regime!r}")
        if not 0 <= self.mu2_min < self.mu2_max:
            raise ValueError("need 0 <= control.mu2_min < control.mu2_max")
        if not 0 <= self.overlap <= 1:
            raise ValueError("control.overlap must lie in [0, 1]")
        if self.lambda_band < 0:
            raise ValueError("control.lambda_band must be non-negative")

    @property
    def shared_interval(self) -> tuple[float, float]:
        # measured from the ends so overlap=1 reproduces the endpoints exactly
        margin = 0.5 * (1.0 - self.overlap) * (self.mu2_max - self.mu2_min)
        return self.mu2_min + margin, self.mu2_max - margin

    @property
    def penalty_weight(self) -> float:
        return self.lambda_band if self.regime == "homeo" else 0.0


@dataclass
class UnitBand:
    lower: np.ndarray
    upper: np.ndarray

    def __len__(self):
        return len(self.lower)


@dataclass
class Mu2Estimate:
    per_unit: np.ndarray
    mean: float


@dataclass
class ProjectionReport:
    scales: np.ndarray
    low: np.ndarray
    high: np.ndarray
    clamp_low: float
    clamp_high: float
    nudged: int


def sample_bands(cfg: BandConfig, n_units: int, rng: np.random.Generator) -> UnitBand:
    """Heterogeneous sub-bands that all contain the shared central interval."""
    s_lo, s_hi = cfg.shared_interval
    lower = rng.uniform(cfg.mu2_min, s_lo, size=n_units)
    upper = rng.uniform(s_hi, cfg.mu2_max, size=n_units)
    if cfg.overlap == 0:
        # degenerate shared point; keep l < u strictly
        lower = np.minimum(lower, np.nextafter(s_lo, -np.inf))
        upper = np.maximum(upper, np.nextafter(s_hi, np.inf))
    return UnitBand(lower, upper)


def estimate_mu2(mu_batch) -> Mu2Estimate:
    """Batch estimate of E_h[mu_j(h)^2]; every leading axis counts as a sample axis."""
    mu = np.asarray(mu_batch, dtype=float)
    mu = mu.reshape(-1, mu.shape[-1])
    if mu.shape[0] < 1:
        raise ValueError("empty batch")
    per_unit = np.mean(mu * mu, axis=0)
    return Mu2Estimate(per_unit, float(np.mean(per_unit)))


def _violations(per_unit, bands: UnitBand):
    low = per_unit < bands.lower * (1.0 - BAND_RTOL)
    high = per_unit > bands.upper * (1.0 + BAND_RTOL)
    return low, high


def out_fraction(est: Mu2Estimate, bands: UnitBand) -> tuple[float, float, float]:
    low, high = _violations(est.per_unit, bands)
    n = len(est.per_unit)
    frac_low = np.count_nonzero(low) / n
    frac_high = np.count_nonzero(high) / n
    return frac_low, frac_high, frac_low + frac_high


def band_penalty(est: Mu2Estimate, bands: UnitBand) -> float:
    m = est.per_unit
    below = np.maximum(0.0, bands.lower - m)
    above = np.maximum(0.0, m - bands.upper)
    return float(np.mean(below * below + above * above))


def band_penalty_grad(est: Mu2Estimate, bands: UnitBand) -> np.ndarray:
    """d band_penalty / d mu2_j."""
    m = est.per_unit
    below = np.maximum(0.0, bands.lower - m)
    above = np.maximum(0.0, m - bands.upper)
    return (2.0 * above - 2.0 * below) / len(m)


def projection_scales(est: Mu2Estimate, bands: UnitBand):
    m = est.per_unit
    low, high = _violations(m, bands)
    scales = np.ones_like(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        scales[low] = np.sqrt(bands.lower[low] / m[low])
        scales[high] = np.sqrt(bands.upper[high] / m[high])
    return scales, low, high


def project_units(layer, est: Mu2Estimate, bands: UnitBand) -> ProjectionReport:
    """Retract every out-of-band unit onto its violated bound by rescaling (a_j, b_j).

    Mutates ``layer.enc_weights`` and ``layer.enc_bias`` in place. A unit with
    mu_j^2 == 0 cannot be rescaled upward; its bias is set to +-sqrt(l_j) instead.
    """
    scales, low, high = projection_scales(est, bands)
    dead = low & (est.per_unit == 0.0)
    fix = (low | high) & ~dead
    layer.enc_weights[fix] *= scales[fix, None]
    layer.enc_bias[fix] *= scales[fix]
    nudged = int(np.count_nonzero(dead))
    if nudged:
        sign = np.where(layer.enc_bias[dead] < 0, -1.0, 1.0)
        layer.enc_bias[dead] = sign * np.sqrt(bands.lower[dead])
        scales[dead] = np.nan
        log.info("bias nudge on %d unit(s) with zero latent energy", nudged)
    live_low = low & ~dead
    clamp_low = float(np.mean(scales[live_low] - 1.0)) if np.any(live_low) else 0.0
    clamp_high = float(np.mean(1.0 - scales[high])) if np.any(high) else 0.0
    return ProjectionReport(scales, low, high, clamp_low, clamp_high, nudged)


def beta_schedule(step: int, beta: float, warmup_steps: int = 0) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if warmup_steps <= 0 or step >= warmup_steps:
        return float(beta)
    return float(beta) * step / warmup_steps


def constraint_energy(kl_per_unit, band_pen: float, ar_pen: float,
                      beta: float, lambda_band: float, alpha_ar: float) -> float:
    """Additive constraint energy: the non-task part of the training objective."""
    kl = float(np.mean(kl_per_unit)) if np.size(kl_per_unit) else 0.0
    return beta * kl + lambda_band * band_pen + alpha_ar * ar_pen
