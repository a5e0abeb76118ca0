"""Exit policies and the layer-by-layer inference engine."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from exitbert import heads
from exitbert.data import TaskBatch
from exitbert.errors import ConfigError
from exitbert.heads import Prediction
from exitbert.model import MultitaskModel

EXIT_KINDS = ("none", "threshold", "lte")
NEVER = math.inf


@dataclass(frozen=True)
class ExitPolicy:
    kind: str = "none"
    tau: float = NEVER

    def __post_init__(self):
        if self.kind not in EXIT_KINDS:
            raise ConfigError(f"exit.kind must be one of {EXIT_KINDS}, got {self.kind!r}")
        if self.kind != "none" and not (self.tau >= 0 or self.tau == NEVER):
            raise ConfigError(f"exit threshold must be >= 0, got {self.tau}")

    @classmethod
    def never(cls) -> ExitPolicy:
        return cls("none")

    @classmethod
    def threshold(cls, tau: float) -> ExitPolicy:
        return cls("threshold", tau)

    @classmethod
    def lte(cls, tau_u: float = 0.9) -> ExitPolicy:
        return cls("lte", tau_u)

    def check(self, model: MultitaskModel, task: str) -> None:
        if self.kind == "threshold" and not model.has_distribution(task):
            raise ConfigError(
                f"threshold exiting needs a class distribution, which {task} does not have "
                "here; use exit.kind = lte")


@dataclass
class ExitTrace:
    example_id: str
    statistics: list[float] = field(default_factory=list)
    exit_layer: int = 0

    @property
    def layers_executed(self) -> int:
        return self.exit_layer


def layer_statistic(model: MultitaskModel, task: str, policy: ExitPolicy, out) -> float | None:
    if policy.kind == "threshold":
        return float(heads.output_confidence(model, task, out.output.data)[0])
    if policy.kind == "lte":
        return float(model.certainty(task, out.pooled).data[0])
    return None


def run_with_early_exit(batch: TaskBatch, model: MultitaskModel, policy: ExitPolicy,
                        task: str) -> tuple[Prediction, ExitTrace]:
    """Evaluate one example layer by layer, stopping at the first layer whose
    statistic reaches the threshold; the last layer always exits."""
    if len(batch) != 1:
        raise ConfigError(f"early-exit inference runs one example at a time, got {len(batch)}")
    policy.check(model, task)
    n = model.config.num_layers
    trace = ExitTrace(batch.ids[0] if batch.ids else "0")
    out = None
    for out in model.iter_layers(batch, task):
        stat = layer_statistic(model, task, policy, out)
        if stat is not None:
            trace.statistics.append(stat)
        if out.layer == n or (stat is not None and stat >= policy.tau):
            break
    trace.exit_layer = out.layer
    pred = Prediction(task, out.output.data[0], model.decode(task, out.output)[0], out.layer)
    return pred, trace


def predict_with_exits(batches: Sequence[TaskBatch], model: MultitaskModel, policy: ExitPolicy,
                       task: str) -> tuple[list[Prediction], list[ExitTrace]]:
    """Per-example early-exit inference over every row of every batch."""
    preds, traces = [], []
    for batch in batches:
        for r in range(len(batch)):
            p, t = run_with_early_exit(batch.select([r]), model, policy, task)
            preds.append(p)
            traces.append(t)
    return preds, traces


def first_crossing(statistics: Sequence[float], tau: float) -> int:
    """1-based index of the first statistic >= tau among all but the last layer,
    else the number of layers."""
    n = len(statistics)
    for i, s in enumerate(statistics[:-1], start=1):
        if s >= tau:
            return i
    return n


def all_layer_outputs(batch: TaskBatch, model: MultitaskModel, task: str) -> list[np.ndarray]:
    """Raw output of every layer's classifier for a single example (no exiting)."""
    return [out.output.data[0] for out in model.iter_layers(batch, task)]
