"""Per-unit AR(1) latent dynamics: explicit prior and causal penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import kl_gaussian

AR_MODES = ("off", "prior", "penalty")


@dataclass
class ArConfig:
    mode: str = "penalty"
    tau_min: float = 1.0
    tau_max: float = 8.0
    sigma: float = 1.0
    stride: int = 1
    alpha: float = 0.1
    stop_gradient_prev: bool = True

    def __post_init__(self):
        if self.mode not in AR_MODES:
            raise ValueError(f"ar.mode must be one of {AR_MODES}, got {self.mode!r}")
        if not 0 < self.tau_min <= self.tau_max:
            raise ValueError("need 0 < ar.tau_min <= ar.tau_max")
        if self.sigma <= 0:
            raise ValueError("ar.sigma must be positive")
        if self.stride < 1:
            raise ValueError("ar.stride must be >= 1")
        if self.alpha < 0:
            raise ValueError("ar.alpha must be non-negative")

    @property
    def penalty_weight(self) -> float:
        return self.alpha if self.mode == "penalty" else 0.0


def phi_from_tau(tau, dt: float = 1.0):
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise ValueError("tau must be positive")
    out = np.exp(-dt / tau)
    return out if out.ndim else float(out)


def sample_taus(cfg: ArConfig, n_units: int, rng: np.random.Generator) -> np.ndarray:
    # always consumes n_units draws so the stream does not depend on the mode
    return rng.uniform(cfg.tau_min, cfg.tau_max, size=n_units)


def ar_prior_kl(mu_t, sigma_t, prev_mu, phi, sigma_ar):
    return kl_gaussian(mu_t, sigma_t, np.asarray(phi) * np.asarray(prev_mu), sigma_ar)


def _as_btn(seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.ndim == 2:
        seq = seq[None]
    if seq.ndim != 3:
        raise ValueError("mu sequence must be (T,), (T, N) or (B, T, N)")
    return seq


def ar_residuals(seq, phi, stride: int = 1) -> np.ndarray:
    seq = _as_btn(seq)
    T = seq.shape[1]
    if T <= stride:
        raise ValueError("window too short for stride")
    return seq[:, stride:, :] - np.asarray(phi, dtype=float) * seq[:, :-stride, :]


def ar_penalty(seq, phi, stride: int = 1) -> float:
    """Mean squared causal residual (mu_t - phi * mu_{t-k}) over units, steps and windows."""
    r = ar_residuals(seq, phi, stride)
    return float(np.mean(r * r))


def ar_penalty_grad(seq, phi, stride: int = 1) -> np.ndarray:
    """Gradient of ar_penalty with respect to the (B, T, N) mu block."""
    seq3 = _as_btn(seq)
    r = ar_residuals(seq3, phi, stride)
    scale = 2.0 / r.size
    g = np.zeros_like(seq3)
    g[:, stride:, :] += scale * r
    g[:, :-stride, :] -= scale * np.asarray(phi, dtype=float) * r
    return g.reshape(np.shape(seq))


def ar_share(alpha_ar: float, l_ar: float, l_total: float) -> float:
    if not l_total > 0:
        raise ValueError("ar_share needs a positive total loss")
    return float(alpha_ar * l_ar / l_total)


def lag_autocorr(seq, lag: int = 1) -> float:
    """Mean within-window lag autocorrelation of a (B, T, N) mu block.

    Each (window, unit) series is demeaned on its own; flat series are skipped.
    """
    seq = _as_btn(seq)
    if seq.shape[1] <= lag:
        raise ValueError("window too short for lag")
    c = seq - seq.mean(axis=1, keepdims=True)
    num = np.sum(c[:, lag:, :] * c[:, :-lag, :], axis=1)
    den = np.sum(c * c, axis=1)
    ok = den > 1e-300
    if not np.any(ok):
        return float("nan")
    return float(np.mean(num[ok] / den[ok]))
