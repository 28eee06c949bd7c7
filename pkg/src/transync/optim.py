"""Plain SGD and Adam over named parameter tensors."""

from __future__ import annotations

import math
from typing import Iterable, Mapping

import numpy as np

from .tensor import Tensor

__all__ = ["SGD", "Adam", "clip_grad_norm", "warmup_cosine_lr"]


class _Optimizer:
    def __init__(self, params: Mapping[str, Tensor] | Iterable[Tensor]):
        if isinstance(params, Mapping):
            self.params = list(params.values())
        else:
            self.params = list(params)
        if not self.params:
            raise ValueError("no parameters to optimize")

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        raise NotImplementedError


class SGD(_Optimizer):
    def __init__(self, params, lr: float = 1e-2):
        super().__init__(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam(_Optimizer):
    """Adam with bias correction, defaults (0.9, 0.999), lr 1e-3."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        super().__init__(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_grad_norm(params: Mapping[str, Tensor] | Iterable[Tensor],
                   max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm. Tensors without gradients are skipped.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    tensors = params.values() if isinstance(params, Mapping) else params
    grads = [p.grad for p in tensors if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def warmup_cosine_lr(step: int, total_steps: int, peak: float,
                     warmup_steps: int, floor_frac: float = 0.1) -> float:
    """Learning rate at `step`: linear warmup to `peak`, then cosine
    decay to `floor_frac * peak` by the final step."""
    if step < 0 or total_steps <= 0:
        raise ValueError("step must be >= 0 and total_steps positive")
    if warmup_steps > 0 and step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    floor = floor_frac * peak
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
