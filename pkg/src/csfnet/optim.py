"""Adam with per-parameter moment buffers and a step learning-rate schedule."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update.  Gradients are left in place for the caller to clear."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {p!r} has no gradient")
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


class Adam:
    """Adam over a fixed parameter list with ``lr`` halved every ``lr_step`` epochs."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8, lr_step: int | None = 20,
                 lr_decay: float = 0.5):
        self.params = list(params)
        self.base_lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.lr_step = lr_step
        self.lr_decay = lr_decay
        self.lr = lr

    def set_epoch(self, epoch: int) -> None:
        if self.lr_step:
            self.lr = self.base_lr * self.lr_decay ** (epoch // self.lr_step)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        # parameters unused by the current graph (e.g. an ablated branch) keep their state
        active = [p for p in self.params if p.grad is not None]
        adam_step(active, self.lr, self.beta1, self.beta2, self.eps)
