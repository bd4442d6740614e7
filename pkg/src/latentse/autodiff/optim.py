"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .engine import Tensor


class Adam:
    """Tracks first/second moment accumulators per parameter.

    step() applies the bias-corrected update in place and increments the
    step count; parameters with no gradient are left untouched.
    """

    def __init__(self, params, learning_rate: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        self.params: list[Tensor] = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient in parameter {i} (shape {p.shape}) "
                    f"at step {t}"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**t)
            v_hat = self.v[i] / (1.0 - self.beta2**t)
            p.data -= (self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.data.dtype, copy=False
            )

    def zero_grad(self):
        for p in self.params:
            p.grad = None
