"""Parameter update rules."""

from typing import Dict

import numpy as np

from .autodiff import Tensor


class Adam:
    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for n, p in self.params.items():
            if not p.requires_grad or p.grad is None or self.lr == 0:
                continue
            g = p.grad
            self.m[n] = self.beta1 * self.m[n] + (1 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)


class SGDMomentum:
    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-2, momentum: float = 0.9):
        self.params = params
        self.lr, self.momentum = lr, momentum
        self.velocity = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self):
        for n, p in self.params.items():
            if not p.requires_grad or p.grad is None or self.lr == 0:
                continue
            self.velocity[n] = self.momentum * self.velocity[n] + p.grad
            p.data = (p.data - self.lr * self.velocity[n]).astype(p.data.dtype, copy=False)


def make_optimizer(name: str, params: Dict[str, Tensor], lr: float):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd_momentum":
        return SGDMomentum(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")
