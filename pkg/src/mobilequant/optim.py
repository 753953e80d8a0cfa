"""Adam with per-group learning rates, cosine decay and global-norm clipping."""

from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np


def cosine_lr(base: float, step: int, total: int) -> float:
    if total <= 1:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    if max_norm is None:
        return dict(grads)
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return dict(grads)
    k = max_norm / norm
    return {n: g * k for n, g in grads.items()}


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: Callable[[str], float] | float,
                 betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr if callable(lr) else (lambda _name, _v=lr: _v)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: Mapping[str, np.ndarray], scale: float = 1.0) -> None:
        """Update in place; ``scale`` multiplies every group's rate (schedules)."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            if name not in self.params:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p = self.params[name]
            step = self.lr(name) * scale * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                step = step + self.lr(name) * scale * self.weight_decay * p
            self.params[name] = p - step
