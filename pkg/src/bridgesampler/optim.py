"""Rectified Adam with global-norm gradient clipping and a cosine lr decay."""

from __future__ import annotations

import numpy as np


def clip_by_global_norm(grads: dict[str, np.ndarray],
                        max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale the whole gradient dict so its joint L2 norm is <= max_norm."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(np.asarray(g) ** 2))
    norm = float(np.sqrt(sq))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: np.asarray(g) * scale for k, g in grads.items()}, norm


def cosine_lr(step: int, total_steps: int, lr_start: float,
              final_fraction: float = 0.1) -> float:
    """Cosine anneal from lr_start down to lr_start * final_fraction."""
    if total_steps < 1:
        return lr_start
    frac = min(max(step / total_steps, 0.0), 1.0)
    lr_end = lr_start * final_fraction
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + np.cos(np.pi * frac))


class RAdam:
    """Rectified Adam (variance-rectified warmup, no manual warmup schedule)."""

    def __init__(self, param_names, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: None for n in param_names}
        self.v = {n: None for n in param_names}
        self.rho_inf = 2.0 / (1.0 - beta2) - 1.0

    def step(self, values: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
        """Return updated parameter values; does not mutate the inputs."""
        self.t += 1
        t = self.t
        b1, b2 = self.beta1, self.beta2
        rho = self.rho_inf - 2.0 * t * b2 ** t / (1.0 - b2 ** t)
        rectified = rho > 4.0
        if rectified:
            r = np.sqrt(((rho - 4.0) * (rho - 2.0) * self.rho_inf)
                        / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho))
        out = {}
        for name, val in values.items():
            g = np.asarray(grads.get(name))
            if grads.get(name) is None:
                out[name] = val
                continue
            if self.m.get(name) is None:
                self.m[name] = np.zeros_like(val, dtype=np.float64)
                self.v[name] = np.zeros_like(val, dtype=np.float64)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** t)
            if rectified:
                v_hat = np.sqrt(v / (1.0 - b2 ** t))
                out[name] = val - lr * r * m_hat / (v_hat + self.eps)
            else:
                out[name] = val - lr * m_hat
        return out
