"""Losses and divergences. All accept a single example or a leading batch axis
and return a scalar (the batch mean)."""
from __future__ import annotations

import numpy as np

from exitbert import tensor as T
from exitbert.errors import ContractError, DataError, DegenerateInputError
from exitbert.tensor import Tensor

PROB_FLOOR = 1e-12


def cross_entropy(logits, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` (natural log)."""
    logits = T.as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = logits.reshape(1, -1)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    K = logits.shape[-1]
    if labels.shape[0] != logits.shape[0]:
        raise DataError(f"{labels.shape[0]} labels for {logits.shape[0]} rows of logits")
    if labels.min() < 0 or labels.max() >= K:
        raise DataError(f"label outside [0, {K}): {labels.tolist()}")
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(labels)), labels]
    return -T.mean(picked)


def binary_cross_entropy_with_logit(z, labels) -> Tensor:
    """Two-class cross entropy on a single logit, via logits ``(0, z)``."""
    z = T.as_tensor(z).reshape(-1, 1)
    zeros = Tensor._wrap(np.zeros(z.shape))
    return cross_entropy(T.concat([zeros, z], axis=1), labels)


def two_class_logits(z) -> Tensor:
    z = T.as_tensor(z).reshape(-1, 1)
    return T.concat([Tensor._wrap(np.zeros(z.shape)), z], axis=1)


def mse_loss(pred, target) -> Tensor:
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise DataError(f"mse_loss length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise DataError("mse_loss on empty input")
    return T.mean(T.square(pred - target))


def cosine_similarity(u, v, axis: int = -1) -> Tensor:
    u, v = T.as_tensor(u), T.as_tensor(v)
    nu = np.sqrt((u.data * u.data).sum(axis=axis))
    nv = np.sqrt((v.data * v.data).sum(axis=axis))
    if np.any(nu == 0) or np.any(nv == 0):
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    dot = T.tsum(u * v, axis=axis)
    norms = T.sqrt(T.tsum(T.square(u), axis=axis)) * T.sqrt(T.tsum(T.square(v), axis=axis))
    return dot / norms


def cosine_embedding_loss(u, v, labels, margin: float = 0.0) -> Tensor:
    """``1 - cos`` for positive pairs, ``max(0, cos - margin)`` for negative ones."""
    if not 0.0 <= margin < 1.0:
        raise ContractError(f"margin must be in [0, 1), got {margin}")
    cos = cosine_similarity(u, v)
    return cosine_embedding_loss_from_cos(cos, labels, margin)


def cosine_embedding_loss_from_cos(cos, labels, margin: float = 0.0) -> Tensor:
    cos = T.as_tensor(cos).reshape(-1)
    pos = np.atleast_1d(np.asarray(labels)).astype(np.float64)
    per = (1.0 - cos) * pos + T.relu(cos - margin) * (1.0 - pos)
    return T.mean(per)


def _check_distribution(p: np.ndarray, name: str) -> None:
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError(f"{name} is not normalized (row sums {np.round(sums, 8).tolist()})")


def symmetrized_kl(p, q, check: bool = True) -> Tensor:
    """``KL(p||q) + KL(q||p)`` along the last axis, batch-averaged.

    Entries are clamped to at least 1e-12 before taking logs.
    """
    p, q = T.as_tensor(p), T.as_tensor(q)
    if p.shape != q.shape:
        raise ContractError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    if check:
        _check_distribution(p.data, "p")
        _check_distribution(q.data, "q")
    pc, qc = T.clip_min(p, PROB_FLOOR), T.clip_min(q, PROB_FLOOR)
    per = T.tsum((pc - qc) * (T.log(pc) - T.log(qc)), axis=-1)
    return T.mean(per)
