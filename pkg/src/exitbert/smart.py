"""Smoothness-inducing adversarial regularization.

The perturbation lives on the embedding output (the tensor entering layer 1),
is kept in an infinity-norm ball of radius ``epsilon`` and is found by a few
steps of projected gradient ascent on the output divergence. Both forward
passes of the regularizer run without dropout so a zero perturbation gives a
zero regularizer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from exitbert import heads
from exitbert import tensor as T
from exitbert.data import TaskBatch
from exitbert.errors import ConfigError
from exitbert.model import MultitaskModel
from exitbert.tensor import Tape, Tensor


@dataclass
class SmartConfig:
    lambda_s: float = 1.0
    epsilon: float = 1e-5
    steps: int = 1
    ascent_lr: float = 1e-3
    init_sigma: float = 1e-5
    norm_p: str = "inf"
    tasks: tuple[str, ...] = field(default=("para",))

    def __post_init__(self):
        if self.lambda_s < 0:
            raise ConfigError(f"smart.lambda_s must be >= 0, got {self.lambda_s}")
        if self.epsilon <= 0:
            raise ConfigError(f"smart.epsilon must be > 0, got {self.epsilon}")
        if self.steps < 0:
            raise ConfigError(f"smart.steps must be >= 0, got {self.steps}")
        if self.ascent_lr <= 0:
            raise ConfigError(f"smart.ascent_lr must be > 0, got {self.ascent_lr}")
        if self.init_sigma < 0:
            raise ConfigError(f"smart.init_sigma must be >= 0, got {self.init_sigma}")
        if self.norm_p != "inf":
            raise ConfigError(f"only the infinity norm is supported, got {self.norm_p!r}")

    def active_for(self, task: str) -> bool:
        return self.lambda_s > 0 and task in self.tasks


def project(delta: np.ndarray, epsilon: float) -> np.ndarray:
    return np.clip(delta, -epsilon, epsilon)


def perturb_init(shape, config: SmartConfig, rng: np.random.Generator) -> np.ndarray:
    if config.init_sigma == 0:
        return np.zeros(shape)
    return project(rng.normal(0.0, config.init_sigma, size=shape), config.epsilon)


def ascent_step(delta: np.ndarray, grad: np.ndarray, config: SmartConfig,
                axis=None) -> np.ndarray:
    """Move along ``grad`` scaled to unit infinity norm, then project back into the ball.

    ``axis`` picks the axes the norm is taken over (``None``: the whole array);
    rows with zero gradient stay where they are.
    """
    norm = np.abs(grad).max(axis=axis, keepdims=axis is not None)
    safe = np.where(norm > 0, norm, 1.0)
    step = np.where(norm > 0, grad / safe, 0.0)
    return project(delta + config.ascent_lr * step, config.epsilon)


def embedding_shapes(model: MultitaskModel, batch: TaskBatch) -> list[tuple[int, int, int]]:
    H = model.config.hidden
    if batch.packing == "embed_first":
        a, b = batch.inputs
        return [(len(batch), a[0].shape[1] + b[0].shape[1], H)]
    return [(len(batch), ids.shape[1], H) for ids, _, _ in batch.inputs]


def adversarial_perturbation(model: MultitaskModel, batch: TaskBatch, task: str,
                             config: SmartConfig, rng: np.random.Generator,
                             clean: Tensor | None = None) -> list[np.ndarray]:
    """Initial draw plus ``config.steps`` ascent steps; parameters' grads are untouched."""
    if clean is None:
        clean = model.forward(batch, task)[-1].output
    target = clean.detach()
    deltas = [perturb_init(s, config, rng) for s in embedding_shapes(model, batch)]
    for _ in range(config.steps):
        leaves = [Tensor(d, requires_grad=True) for d in deltas]
        with Tape() as tape:
            adv = model.forward(batch, task, perturb=leaves)[-1].output
            div = heads.smart_divergence(model, task, adv, target)
        if not div.requires_grad:
            break
        tape.backward(div, inputs=leaves)
        # a leaf the output never reads has no gradient; it stays put
        deltas = [ascent_step(d, np.zeros_like(d) if leaf.grad is None else leaf.grad, config,
                              axis=tuple(range(1, d.ndim)))
                  for d, leaf in zip(deltas, leaves)]
    return deltas


def smoothness_regularizer(model: MultitaskModel, batch: TaskBatch, task: str,
                           config: SmartConfig, rng: np.random.Generator,
                           deltas: list[np.ndarray] | None = None) -> Tensor:
    """``R_s``: batch mean of the divergence between perturbed and clean outputs.

    Differentiable in the parameters (through both passes) when a tape is active;
    the perturbation itself is a constant. Pass ``deltas`` to skip the search.
    """
    if len(batch) == 0:
        raise ConfigError("smoothness regularizer needs a nonempty batch")
    clean = model.forward(batch, task)[-1].output
    if deltas is None:
        deltas = adversarial_perturbation(model, batch, task, config, rng, clean)
    adv = model.forward(batch, task, perturb=[T.as_tensor(d) for d in deltas])[-1].output
    return heads.smart_divergence(model, task, adv, clean)


def smart_objective(task_loss: Tensor, model: MultitaskModel, batch: TaskBatch, task: str,
                    config: SmartConfig, rng: np.random.Generator) -> tuple[Tensor, Tensor | None]:
    """``F = L + lambda_s * R_s``. Returns ``(F, R_s)``; with ``lambda_s = 0`` the
    regularizer is skipped and ``F`` is ``task_loss`` itself."""
    if config.lambda_s == 0:
        return task_loss, None
    reg = smoothness_regularizer(model, batch, task, config, rng)
    return task_loss + config.lambda_s * reg, reg
