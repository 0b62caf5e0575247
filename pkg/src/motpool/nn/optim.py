"""Parameter updates: plain SGD (default) and Adam (config option)."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .tape import Node


def sgd_step(params: list[tuple[str, Node]], lr: float) -> None:
    """p <- p - lr*grad for every parameter that received a gradient.

    Validates every gradient before touching any parameter, so a
    non-finite gradient aborts the whole step.
    """
    if lr <= 0:
        raise NumericError(f"learning rate must be positive, got {lr}")
    for name, p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for parameter {name!r}; step aborted")
    for _, p in params:
        if p.grad is not None:
            p.value -= lr * p.grad


class AdamOptimizer:
    """Adam with the usual bias-corrected moment estimates."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params: list[tuple[str, Node]], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for name, p in params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for parameter {name!r}; step aborted")
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params:
            if p.grad is None:
                continue
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(p.value)
                v = np.zeros_like(p.value)
            m = b1 * m + (1 - b1) * p.grad
            v = b2 * v + (1 - b2) * p.grad * p.grad
            self._m[name] = m
            self._v[name] = v
            m_hat = m / (1 - b1 ** self._t)
            v_hat = v / (1 - b2 ** self._t)
            p.value -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
