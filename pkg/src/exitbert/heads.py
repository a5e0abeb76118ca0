"""Per-task losses on classifier outputs, LTE terms and the summed early-exit objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from exitbert import losses
from exitbert import tensor as T
from exitbert.data import TaskBatch
from exitbert.errors import ConfigError
from exitbert.model import LayerOutput, MultitaskModel
from exitbert.tensor import Tensor


@dataclass
class Prediction:
    task: str
    output: np.ndarray       # raw classifier output
    label: np.ndarray        # decoded label (or score for sts)
    layer: int


def task_forward(model: MultitaskModel, batch: TaskBatch, task: str) -> Prediction:
    """Eval-mode forward through the full stack, read out by the task head."""
    final = model.forward(batch, task)[-1]
    return Prediction(task, final.output.data, model.decode(task, final.output), final.layer)


def layer_loss(model: MultitaskModel, task: str, output: Tensor, labels,
               cosine_margin: float = 0.0) -> Tensor:
    """``L_i = H(y, g_i(h_i))``, batch mean."""
    if task == "sst":
        return losses.cross_entropy(output, labels)
    if task == "para":
        if model.para_head == "cosine":
            return losses.cosine_embedding_loss_from_cos(output, labels, cosine_margin)
        return losses.binary_cross_entropy_with_logit(output, labels)
    if task == "sts":
        return losses.mse_loss(output, T.as_tensor(np.asarray(labels, dtype=np.float64)))
    raise ConfigError(f"unknown task {task!r}")


def confidence(logits) -> np.ndarray:
    """Maximum softmax probability along the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 2:
        raise ConfigError("confidence needs at least two classes")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True)).max(axis=-1)


def output_confidence(model: MultitaskModel, task: str, output: np.ndarray) -> np.ndarray:
    if not model.has_distribution(task):
        raise ConfigError(
            f"{task} with the {model.para_head if task == 'para' else 'regression'} head has no "
            "class distribution; use the lte exit policy")
    if task == "para":
        # max(sigmoid(z), 1 - sigmoid(z))
        z = np.atleast_1d(output)
        return confidence(np.stack([np.zeros_like(z), z], axis=-1))
    return confidence(output)


def certainty_target(model: MultitaskModel, task: str, output: np.ndarray, labels) -> np.ndarray:
    """Ground-truth certainty: 1[prediction correct] for classification,
    ``1 - tanh(|pred - y|)`` for regression."""
    labels = np.asarray(labels)
    if model.is_classification(task):
        return (model.decode(task, T.as_tensor(output)) == labels).astype(np.float64)
    # 1 - tanh(x) written as 2e^-2x / (1 + e^-2x) so it stays positive for large errors
    e = np.exp(-2.0 * np.abs(np.asarray(output, dtype=np.float64) - labels))
    return np.maximum(2.0 * e / (1.0 + e), np.finfo(np.float64).tiny)


def lte_loss(u, target) -> Tensor:
    """``J = (u - u~)^2``, batch mean."""
    u = T.as_tensor(u)
    return T.mean(T.square(u - T.as_tensor(np.asarray(target, dtype=np.float64))))


def joint_training_loss(model: MultitaskModel, outputs: Sequence[LayerOutput], labels, task: str,
                        lte: bool = False, layers: Sequence[int] | None = None,
                        cosine_margin: float = 0.0) -> Tensor:
    """``sum_i (L_i + J_i)`` over the selected layers; ``J_i`` only when ``lte`` is on."""
    chosen = set(layers) if layers is not None else None
    total = None
    for out in outputs:
        if chosen is not None and out.layer not in chosen:
            continue
        term = layer_loss(model, task, out.output, labels, cosine_margin)
        if lte:
            u = model.certainty(task, out.pooled)
            term = term + lte_loss(u, certainty_target(model, task, out.output.data, labels))
        total = term if total is None else total + term
    if total is None:
        raise ConfigError("joint_training_loss selected no layers")
    return total


def smart_divergence(model: MultitaskModel, task: str, adv: Tensor, clean: Tensor) -> Tensor:
    """Per-example output divergence, batch mean: symmetrized KL for classifiers with
    a distribution, squared error otherwise."""
    if task == "sst":
        return losses.symmetrized_kl(T.softmax(adv, -1), T.softmax(clean, -1), check=False)
    if task == "para" and model.para_head == "logit":
        return losses.symmetrized_kl(T.softmax(losses.two_class_logits(adv), -1),
                                     T.softmax(losses.two_class_logits(clean), -1), check=False)
    return T.mean(T.square(adv - clean))
