"""Adam with bias correction, global-norm clipping and a post-step hook.

The learning rate follows a linear warmup to the peak and a linear decay
to zero at the final step.  The post-step hook is where the target-network
EMA update attaches, which fixes the ordering: gradient step first, EMA
second, within every training step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericalError
from .tensor import Tensor


@dataclass
class ScheduleConfig:
    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"need 0 < warmup_steps < total_steps, got {self.warmup_steps}/{self.total_steps}"
            )
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Piecewise-linear rate: up to the peak at warmup, down to zero at the end."""
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    if step > cfg.total_steps:
        return 0.0
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    return cfg.peak_lr * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)


class Adam:
    """Holds first/second moments per named parameter; grads clear after a step."""

    def __init__(
        self,
        params: dict[str, Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        grad_clip: float | None = 1.0,
        post_step: Callable[[], None] | None = None,
    ):
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.post_step = post_step
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                g = p.grad.astype(np.float64, copy=False)
                total += float((g * g).sum())
        return math.sqrt(total)

    def step(self, lr: float) -> float:
        """One bias-corrected update; returns the pre-clip global grad norm."""
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in parameter {name!r}; aborting the step")
        norm = self.grad_norm()
        scale = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            scale = self.grad_clip / norm
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, g in grads.items():
            if scale != 1.0:
                g = g * scale
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p = self.params[name]
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        for p in self.params.values():
            p.grad = None
        if self.post_step is not None:
            self.post_step()
        return norm
