"""SGD, RMSprop and AdamW over a name -> Tensor parameter dict.

The ``*_step`` functions are the single-parameter update rules; the classes
apply them to every named parameter that has a gradient, keeping per-parameter
state so masked updates leave other parameters' moments alone.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from exitbert.errors import ConfigError
from exitbert.tensor import Tensor


def sgd_step(w, grad, lr):
    return w - lr * grad


def rmsprop_step(w, grad, v, lr, gamma=0.9, eps=1e-8):
    """Returns ``(w', v')`` with ``v' = gamma v + (1 - gamma) grad^2`` and
    ``w' = w - lr grad / (sqrt(v') + eps)``."""
    v = gamma * v + (1.0 - gamma) * grad * grad
    return w - lr * grad / (np.sqrt(v) + eps), v


def adamw_step(w, grad, m, v, t, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """Bias-corrected Adam with decoupled weight decay; ``t`` is the 1-based step.
    Returns ``(w', m', v')``."""
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return w * (1.0 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Optimizer:
    def __init__(self, params: dict[str, Tensor], lr: float, clip_norm: float = 0.0):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.clip_norm = clip_norm
        self.steps: dict[str, int] = {}

    def step(self, names: Iterable[str] | None = None) -> None:
        """Update the named parameters (all by default) that carry a gradient."""
        names = list(self.params) if names is None else list(names)
        active = [n for n in names if self.params[n].grad is not None]
        scale = 1.0
        if self.clip_norm > 0:
            total = np.sqrt(sum(float((self.params[n].grad ** 2).sum()) for n in active))
            if total > self.clip_norm:
                scale = self.clip_norm / total
        for name in active:
            p = self.params[name]
            t = self.steps.get(name, 0) + 1
            self.steps[name] = t
            p.data = self._update(name, p.data, p.grad * scale if scale != 1.0 else p.grad, t)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _update(self, name, w, grad, t):
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, name, w, grad, t):
        return sgd_step(w, grad, self.lr)


class RMSprop(Optimizer):
    def __init__(self, params, lr, gamma=0.9, eps=1e-8, clip_norm=0.0):
        super().__init__(params, lr, clip_norm)
        self.gamma = gamma
        self.eps = eps
        self.v: dict[str, np.ndarray] = {}

    def _update(self, name, w, grad, t):
        v = self.v.get(name, np.zeros_like(w))
        w, self.v[name] = rmsprop_step(w, grad, v, self.lr, self.gamma, self.eps)
        return w


class AdamW(Optimizer):
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01,
                 clip_norm=0.0):
        super().__init__(params, lr, clip_norm)
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _update(self, name, w, grad, t):
        m = self.m.get(name, np.zeros_like(w))
        v = self.v.get(name, np.zeros_like(w))
        w, self.m[name], self.v[name] = adamw_step(
            w, grad, m, v, t, self.lr, self.betas, self.eps, self.weight_decay)
        return w


def make_optimizer(kind: str, params: dict[str, Tensor], lr: float, gamma: float = 0.9,
                   betas=(0.9, 0.999), weight_decay: float = 0.01, eps: float = 1e-8,
                   clip_norm: float = 0.0) -> Optimizer:
    if kind == "sgd":
        return SGD(params, lr, clip_norm)
    if kind == "rmsprop":
        return RMSprop(params, lr, gamma, eps, clip_norm)
    if kind == "adamw":
        return AdamW(params, lr, betas, eps, weight_decay, clip_norm)
    raise ConfigError(f"optimizer.kind must be sgd, rmsprop or adamw, got {kind!r}")
