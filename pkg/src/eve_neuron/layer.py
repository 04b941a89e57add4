"""The N-unit EVE layer.

Each unit j owns an affine encoder mu_j(h) = a_j . h + b_j and a scalar
std sigma_j = softplus(s_j) + floor shared across inputs. The readout is
y_hat = W f / sqrt(N) + b0 where f holds per-unit statistics.

Two input layouts are supported:

* flat: h is (B, D); f = z (or mu).
* temporal: h is (B, T, D); the encoder runs per time step, giving a mu
  sequence (B, T, N). f = [z_last, mean_t mu_t], so W is O x 2N.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import SIGMA_FLOOR, kl_gaussian, kl_std_normal, raw_from_sigma, sigma_from_raw

READOUT_SOURCES = ("sample_z", "mean_mu")


@dataclass
class ArPrior:
    """Per-unit AR(1) prior N(phi_j * mu_{j,t-1}, sigma_ar^2) for t >= 1."""

    phi: np.ndarray
    sigma_ar: float
    stop_gradient_prev: bool = True


@dataclass
class LayerForward:
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    eps: np.ndarray
    features: np.ndarray
    y_hat: np.ndarray
    kl: np.ndarray | None
    kl_per_unit: np.ndarray | None
    readout_source: str


@dataclass
class EveLayer:
    enc_weights: np.ndarray
    enc_bias: np.ndarray
    raw_sigma: np.ndarray | None
    readout_weights: np.ndarray
    readout_bias: np.ndarray
    temporal: bool = False
    freeze_sigma: bool = False
    sigma_floor: float = SIGMA_FLOOR
    readout_source: str = "sample_z"
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, n_units, input_dim, output_dim, rng, *, temporal=False, stochastic=True,
             init_scale=0.3, readout_scale=1.0, sigma_init=0.5, freeze_sigma=False,
             sigma_floor=SIGMA_FLOOR):
        """Random layer; mu_j has variance ~init_scale^2 for unit-variance inputs.

        ``stochastic=False`` builds the deterministic baseline: same encoder and
        readout, no sigma parameters, no sampling, no KL.
        """
        if min(n_units, input_dim, output_dim) < 1:
            raise ValueError("layer dimensions must be >= 1")
        n_feat = 2 * n_units if temporal else n_units
        enc_w = rng.normal(0.0, init_scale / np.sqrt(input_dim), size=(n_units, input_dim))
        enc_b = np.zeros(n_units)
        w = rng.normal(0.0, readout_scale, size=(output_dim, n_feat))
        b0 = np.zeros(output_dim)
        raw = np.full(n_units, float(raw_from_sigma(sigma_init, sigma_floor))) if stochastic else None
        return cls(enc_w, enc_b, raw, w, b0, temporal=temporal, freeze_sigma=freeze_sigma,
                   sigma_floor=sigma_floor)

    @property
    def n_units(self) -> int:
        return self.enc_weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.enc_weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.readout_weights.shape[0]

    @property
    def stochastic(self) -> bool:
        return self.raw_sigma is not None

    @property
    def sigma(self) -> np.ndarray:
        if not self.stochastic:
            raise AttributeError("deterministic layer has no sigma")
        return sigma_from_raw(self.raw_sigma, self.sigma_floor)

    def params(self) -> dict[str, np.ndarray]:
        p = {"enc_weights": self.enc_weights, "enc_bias": self.enc_bias,
             "readout_weights": self.readout_weights, "readout_bias": self.readout_bias}
        if self.stochastic:
            p["raw_sigma"] = self.raw_sigma
        return p

    def trainable(self) -> list[str]:
        names = list(self.params())
        if self.freeze_sigma and "raw_sigma" in names:
            names.remove("raw_sigma")
        return names

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def load(self, params: dict[str, np.ndarray]):
        for k, v in params.items():
            np.copyto(getattr(self, k), v)

    def copy(self) -> "EveLayer":
        return EveLayer(self.enc_weights.copy(), self.enc_bias.copy(),
                        None if self.raw_sigma is None else self.raw_sigma.copy(),
                        self.readout_weights.copy(), self.readout_bias.copy(),
                        temporal=self.temporal, freeze_sigma=self.freeze_sigma,
                        sigma_floor=self.sigma_floor, readout_source=self.readout_source,
                        meta=dict(self.meta))

    def _check_input(self, h):
        h = np.asarray(h, dtype=float)
        want = 3 if self.temporal else 2
        if h.ndim != want or h.shape[-1] != self.input_dim:
            layout = "(B, T, D)" if self.temporal else "(B, D)"
            raise ValueError(f"expected input {layout} with D={self.input_dim}, got shape {h.shape}")
        return h

    def encode(self, h) -> np.ndarray:
        return np.asarray(h, dtype=float) @ self.enc_weights.T + self.enc_bias

    def readout(self, features) -> np.ndarray:
        return features @ self.readout_weights.T / np.sqrt(self.n_units) + self.readout_bias

    def features(self, mu, last) -> np.ndarray:
        if self.temporal:
            return np.concatenate([last, mu.mean(axis=1)], axis=-1)
        return last

    def forward(self, h, rng=None, prior="std", readout_source=None) -> LayerForward:
        """One stochastic pass. ``prior`` is "std" or an :class:`ArPrior`.

        With ``readout_source="mean_mu"`` no noise enters the prediction; a
        sample is still drawn (when rng is given) for the dashboard.
        """
        h = self._check_input(h)
        if not self.stochastic:
            raise ValueError("deterministic layer: use deterministic_forward")
        source = readout_source or self.readout_source
        if source not in READOUT_SOURCES:
            raise ValueError(f"readout_source must be one of {READOUT_SOURCES}")
        mu = self.encode(h)
        sigma = self.sigma
        mu_last = mu[:, -1, :] if self.temporal else mu
        if rng is None:
            if source == "sample_z":
                raise ValueError("sampling readout needs an rng")
            eps = np.zeros_like(mu_last)
        else:
            eps = rng.standard_normal(mu_last.shape)
        z = mu_last + sigma * eps
        f = self.features(mu, z if source == "sample_z" else mu_last)
        y_hat = self.readout(f)
        kl = layer_kl(mu, sigma, prior, self.temporal)
        out = LayerForward(mu, sigma, z, eps, f, y_hat, kl, kl.reshape(-1, self.n_units).mean(axis=0), source)
        if not (np.all(np.isfinite(y_hat)) and np.all(np.isfinite(kl))):
            raise FloatingPointError("forward produced non-finite values")
        return out

    def deterministic_forward(self, h) -> np.ndarray:
        """Latent-free pass: identity activation on the encoder, same readout."""
        h = self._check_input(h)
        mu = self.encode(h)
        last = mu[:, -1, :] if self.temporal else mu
        y_hat = self.readout(self.features(mu, last))
        if not np.all(np.isfinite(y_hat)):
            raise FloatingPointError("forward produced non-finite values")
        return y_hat


def layer_kl(mu, sigma, prior, temporal: bool) -> np.ndarray:
    """Elementwise KL for every (sample[, step], unit) posterior."""
    if isinstance(prior, ArPrior):
        if not temporal:
            raise ValueError("the AR(1) prior needs a temporal layer")
        kl = np.empty_like(mu)
        kl[:, :1, :] = kl_std_normal(mu[:, :1, :], sigma)
        kl[:, 1:, :] = kl_gaussian(mu[:, 1:, :], sigma, prior.phi * mu[:, :-1, :], prior.sigma_ar)
        return kl
    if prior != "std":
        raise ValueError(f"unknown prior {prior!r}")
    return kl_std_normal(mu, np.broadcast_to(sigma, mu.shape))


def kl_mean(kl_per_unit) -> float:
    return float(np.mean(kl_per_unit))


def kl_eff(kl_per_unit, tau: float) -> float:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return float(np.mean(np.maximum(np.asarray(kl_per_unit, dtype=float) - tau, 0.0)))
