"""Scoring a model on labelled examples, with or without early exits."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from exitbert import metrics
from exitbert.data import TASKS, TaskBatch, TaskExample, Vocab, make_batches
from exitbert.early_exit import ExitPolicy, ExitTrace, predict_with_exits
from exitbert.errors import DegenerateMetricError
from exitbert.heads import task_forward
from exitbert.model import MultitaskModel

log = logging.getLogger(__name__)


@dataclass
class TaskResult:
    task: str
    ids: list[str]
    predictions: np.ndarray
    golds: np.ndarray
    score: float | None
    constant: bool
    traces: list[ExitTrace] = field(default_factory=list)
    note: str = ""


def score_predictions(task: str, preds, golds) -> tuple[float | None, bool, str]:
    """``(score, constant_predictions, note)``; a degenerate Pearson gives ``None``."""
    constant = metrics.is_constant(preds)
    if task == "sts":
        try:
            return metrics.pearson(preds, golds), constant, ""
        except DegenerateMetricError as err:
            log.warning("sts: %s", err)
            return None, constant, str(err)
    return metrics.accuracy(preds, golds), constant, ""


def batched_predictions(model: MultitaskModel, batches: list[TaskBatch], task: str
                        ) -> tuple[list[str], np.ndarray, np.ndarray]:
    ids, preds, golds = [], [], []
    for batch in batches:
        pred = task_forward(model, batch, task)
        ids.extend(batch.ids)
        preds.append(pred.label)
        golds.append(batch.labels)
    return ids, np.concatenate(preds), np.concatenate(golds)


def dev_score_of(scores: dict[str, float | None]) -> float:
    """Mean over present tasks; an undefined metric counts as 0."""
    vals = {t: (0.0 if s is None else s) for t, s in scores.items()}
    return metrics.dev_score(vals.get("sst"), vals.get("para"), vals.get("sts"))


def quick_dev(model: MultitaskModel, dev_batches: dict[str, list[TaskBatch]]
              ) -> tuple[float, dict[str, float | None]]:
    """Full-depth batched scoring used for model selection during training."""
    scores = {}
    for task in TASKS:
        if task in dev_batches:
            _, preds, golds = batched_predictions(model, dev_batches[task], task)
            scores[task] = score_predictions(task, preds, golds)[0]
    return dev_score_of(scores), scores


def evaluate(model: MultitaskModel, examples: dict[str, list[TaskExample]], vocab: Vocab,
             policy: ExitPolicy | dict[str, ExitPolicy],
             batch_size: int = 16) -> dict[str, TaskResult]:
    """Per-example early-exit inference (policy ``none`` runs every layer).

    ``policy`` may be one policy for all tasks or a task -> policy map."""
    results = {}
    for task in TASKS:
        if task not in examples or not examples[task]:
            continue
        batches = make_batches(examples[task], batch_size, model.packing_for(task), vocab,
                               model.config.max_len, seed=None)
        task_policy = policy[task] if isinstance(policy, dict) else policy
        preds, traces = predict_with_exits(batches, model, task_policy, task)
        ids = [t.example_id for t in traces]
        labels = np.array([p.label for p in preds])
        golds = np.concatenate([b.labels for b in batches])
        score, constant, note = score_predictions(task, labels, golds)
        results[task] = TaskResult(task, ids, labels, golds, score, constant, traces, note)
    return results
