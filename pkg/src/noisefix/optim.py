"""First-order optimizers used by the inversion solvers."""
from __future__ import annotations

import numpy as np

__all__ = ["Adam", "GradientDescent", "make_optimizer"]


class Adam:
    """Adam over a list of parameter arrays.

    Standard moment estimates with bias correction:

        m <- b1*m + (1-b1)*g         v <- b2*v + (1-b2)*g^2
        p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, shapes, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        if lr <= 0.0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        self.step_count += 1
        t = self.step_count
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1 ** t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** t)
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


class GradientDescent:
    """Plain fixed-step gradient descent with the same interface as Adam."""

    def __init__(self, shapes, lr: float) -> None:
        if lr <= 0.0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        self.step_count += 1
        return [p - self.lr * g for p, g in zip(params, grads)]


def make_optimizer(name: str, shapes, lr: float):
    if name == "adam":
        return Adam(shapes, lr)
    if name == "gd":
        return GradientDescent(shapes, lr)
    raise ValueError(f"unknown optimizer {name!r}, expected 'adam' or 'gd'")
