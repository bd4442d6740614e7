"""Central-finite-difference verification of analytic gradients.

Meant to run at 64-bit precision; at 32-bit the difference quotient is
dominated by rounding noise and the comparison is meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float


@dataclass
class GradCheckReport:
    checks: list[ParamCheck]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        lines = [
            f"  {c.name}: max rel err {c.max_rel_error:.3e}" for c in self.checks
        ]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"{status} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def gradient_check(fn, params, tolerance: float = 1e-4, eps: float = 1e-5,
                   rel_floor: float = 1e-4) -> GradCheckReport:
    """Compare backward() gradients of fn() against central differences.

    fn is a zero-argument callable returning a scalar Tensor and must be
    deterministic. params is a sequence of Tensors or (name, Tensor)
    pairs; every element of every parameter is perturbed.
    """
    named = [
        p if isinstance(p, tuple) else (f"param{i}", p)
        for i, p in enumerate(params)
    ]
    for _, p in named:
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        for _, p in named
    ]
    checks = []
    for (name, p), a in zip(named, analytic):
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * h)
        a_flat = a.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a_flat), np.abs(numeric)), rel_floor)
        rel = np.abs(a_flat - numeric) / denom
        checks.append(ParamCheck(name, float(rel.max()) if rel.size else 0.0))
    return GradCheckReport(checks, tolerance)
