"""Adam with global-norm gradient clipping over a dict of numpy parameters."""

from __future__ import annotations

import numpy as np


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if norm > max_norm:
        k = max_norm / norm
        return {n: g * k for n, g in grads.items()}, norm
    return grads, norm


class Adam:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip=1.0):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.clip = clip
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> float:
        """Update ``params`` in place from ``grads`` (same keys). Returns the pre-clip norm."""
        grads, norm = clip_by_global_norm(grads, self.clip) if self.clip else (grads, global_norm(grads))
        self.t += 1
        b1, b2 = self.betas
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return norm
