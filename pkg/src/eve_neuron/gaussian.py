"""Scalar Gaussian algebra for a single distributional unit.

Everything here works elementwise on floats or numpy arrays so the layer code
can call it on whole (batch, time, unit) blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-4


@dataclass
class GaussianPosterior:
    mu: float
    sigma: float
    z: float
    eps: float

    @classmethod
    def draw(cls, mu: float, sigma: float, rng: np.random.Generator) -> "GaussianPosterior":
        z, eps = reparameterize(mu, sigma, rng)
        return cls(float(mu), float(sigma), float(z), float(eps))


@dataclass
class ArPriorState:
    phi: float
    sigma_ar: float
    prev_mu: float

    @property
    def mean(self) -> float:
        return self.phi * self.prev_mu


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite posterior parameter")


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


def sigma_from_raw(raw, floor: float = SIGMA_FLOOR):
    """Positive std from an unconstrained scalar: softplus(raw) + floor."""
    return softplus(raw) + floor


def raw_from_sigma(sigma, floor: float = SIGMA_FLOOR):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= floor):
        raise ValueError(f"sigma must exceed the floor {floor}")
    return inv_softplus(sigma - floor)


def kl_std_normal(mu, sigma):
    """KL(N(mu, sigma^2) || N(0, 1)) = 0.5 * (mu^2 + sigma^2 - log sigma^2 - 1)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    _check_finite(mu, sigma)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    var = sigma * sigma
    out = 0.5 * (mu * mu + var - np.log(var) - 1.0)
    return out if out.ndim else float(out)


def kl_gaussian(mu_q, sigma_q, mu_p, sigma_p):
    """KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2))."""
    mu_q, sigma_q, mu_p, sigma_p = (np.asarray(a, dtype=float) for a in (mu_q, sigma_q, mu_p, sigma_p))
    _check_finite(mu_q, sigma_q, mu_p, sigma_p)
    if np.any(sigma_q <= 0) or np.any(sigma_p <= 0):
        raise ValueError("sigma must be positive")
    vq = sigma_q * sigma_q
    vp = sigma_p * sigma_p
    d = mu_q - mu_p
    out = 0.5 * ((vq + d * d) / vp - 1.0 + np.log(vp / vq))
    return out if out.ndim else float(out)


def reparameterize(mu, sigma, rng: np.random.Generator):
    """Draw eps ~ N(0, 1) with the shape of mu and return (mu + sigma * eps, eps)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    shape = np.broadcast_shapes(mu.shape, sigma.shape)
    eps = rng.standard_normal(shape)
    z = mu + sigma * eps
    if z.ndim == 0:
        return float(z), float(eps)
    return z, eps


def reparam_proxy(samples) -> float:
    """Sampling consistency check: mean |z - mu| over (z, mu) pairs."""
    arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise ValueError("reparam_proxy needs at least one sample")
    arr = arr.reshape(-1, 2)
    return float(np.mean(np.abs(arr[:, 0] - arr[:, 1])))
