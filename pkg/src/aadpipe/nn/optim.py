"""Adam with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .layers import Parameter


class Adam:
    """Standard Adam with bias correction.

    Weight decay is decoupled: p <- p - lr*wd*p is applied before the moment
    update, so decay never enters the running moments.
    """

    def __init__(self, params: list[Parameter], lr: float = 3e-4, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if self.weight_decay:
                p.value *= 1.0 - self.lr * self.weight_decay
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
