"""Freezing, the sequential multitask epoch and the fine-tuning schedules.

Strategies:

* ``baseline``: final-layer loss ``L_n`` only.
* ``joint``: ``sum_i L_i`` over every layer's classifier.
* ``slf``: one focused epoch per layer (only layer ``i`` and classifier ``i``
  move, loss ``L_i``), then joint epochs over everything.
* ``smart_alternating``: ``L_n`` with the intermediate classifiers held fixed,
  toggling to ``sum_i L_i`` whenever the dev score stops improving by
  ``delta_switch``; the best epoch's parameters are restored at the end.

With ``lte_enabled`` every ``L_i`` in the active loss becomes ``L_i + J_i``
(except during SLF focus epochs, which must not touch the LTE parameters).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from exitbert import heads
from exitbert.data import TASKS, TaskBatch, TaskExample, Vocab, make_batches
from exitbert.encoder import is_backbone, layer_of
from exitbert.errors import ConfigError, DataError
from exitbert.evaluation import quick_dev
from exitbert.model import MultitaskModel, classifier_layer
from exitbert.optim import Optimizer
from exitbert.smart import SmartConfig, smart_objective
from exitbert.tensor import Tape

log = logging.getLogger(__name__)

STRATEGIES = ("baseline", "joint", "slf", "smart_alternating")
FREEZE_MODES = ("pretrain", "finetune")


@dataclass
class TrainConfig:
    strategy: str = "baseline"
    epochs: int = 5
    batch_size: int = 16
    freeze_mode: str = "finetune"
    seed: int = 0
    delta_switch: float = 1e-4
    lte_enabled: bool = False
    cosine_margin: float = 0.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"train.strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.freeze_mode not in FREEZE_MODES:
            raise ConfigError(f"train.freeze_mode must be one of {FREEZE_MODES}")
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    stage: str
    mean_loss: dict[str, float] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)
    dev_score: float | None = None

    @property
    def total_steps(self) -> int:
        return sum(self.steps.values())


@dataclass
class TrainResult:
    epochs: list[EpochStats]
    stage_log: list[str]
    best_dev: float | None = None
    best_epoch: int | None = None

    @property
    def steps(self) -> int:
        return sum(e.total_steps for e in self.epochs)


def trainable_names(model: MultitaskModel, freeze_mode: str) -> list[str]:
    """``pretrain`` keeps every backbone parameter fixed; heads always train."""
    if freeze_mode == "pretrain":
        return [n for n in model.params if not is_backbone(n)]
    return list(model.params)


def focus_names(model: MultitaskModel, layer: int) -> list[str]:
    """Layer ``layer``'s backbone block plus every task's layer-``layer`` classifier."""
    return [n for n in model.params if layer_of(n) == layer or classifier_layer(n) == layer]


def final_stage_names(model: MultitaskModel) -> list[str]:
    """Everything except the intermediate classifiers."""
    n = model.config.num_layers
    return [name for name in model.params
            if classifier_layer(name) is None or classifier_layer(name) == n]


class Trainer:
    def __init__(self, model: MultitaskModel, optimizer: Optimizer, config: TrainConfig,
                 vocab: Vocab, smart: SmartConfig | None = None):
        self.model = model
        self.optimizer = optimizer
        self.config = config
        self.vocab = vocab
        self.smart = smart
        self.rng = np.random.default_rng([config.seed, 1])
        self.epoch = 0

    # -- steps

    def batches(self, task: str, examples: list[TaskExample], epoch: int) -> list[TaskBatch]:
        return make_batches(examples, self.config.batch_size, self.model.packing_for(task),
                            self.vocab, self.model.config.max_len,
                            seed=self.config.seed * 1_000_003 + epoch * 7 + TASKS.index(task))

    def step(self, batch: TaskBatch, task: str, layers: list[int], names: list[str],
             lte: bool) -> float:
        model = self.model
        upto = max(layers)
        with Tape() as tape:
            outputs = []
            for out in model.iter_layers(batch, task, train=True, rng=self.rng):
                outputs.append(out)
                if out.layer == upto:
                    break
            loss = heads.joint_training_loss(model, outputs, batch.labels, task, lte=lte,
                                             layers=layers,
                                             cosine_margin=self.config.cosine_margin)
            if self.smart is not None and self.smart.active_for(task):
                loss, _ = smart_objective(loss, model, batch, task, self.smart, self.rng)
        tape.backward(loss)
        self.optimizer.step(names)
        model.zero_grad()
        return loss.item()

    def train_epoch_multitask(self, train: dict[str, list[TaskExample]],
                              layers: list[int] | None = None, names: list[str] | None = None,
                              lte: bool | None = None, stage: str = "") -> EpochStats:
        """One pass over every enabled task in the fixed order sst, para, sts."""
        tasks = [t for t in TASKS if train.get(t)]
        if not tasks:
            raise DataError("no task has training examples")
        layers = layers or [self.model.config.num_layers]
        allowed = set(trainable_names(self.model, self.config.freeze_mode))
        names = [n for n in (names or self.model.params) if n in allowed]
        lte = self.config.lte_enabled if lte is None else lte
        self.epoch += 1
        stats = EpochStats(self.epoch, stage)
        for task in tasks:
            losses = [self.step(b, task, layers, names, lte)
                      for b in self.batches(task, train[task], self.epoch)]
            stats.mean_loss[task] = math.fsum(losses) / len(losses)
            stats.steps[task] = len(losses)
        log.info("epoch %d [%s] %s", self.epoch, stage,
                 " ".join(f"{t}={v:.4f}" for t, v in stats.mean_loss.items()))
        return stats

    # -- schedules

    def run(self, train: dict[str, list[TaskExample]],
            dev: dict[str, list[TaskExample]] | None = None) -> TrainResult:
        strategy = self.config.strategy
        if strategy == "slf":
            return self.slf_run(train)
        if strategy == "smart_alternating":
            return self.smart_alternating_run(train, dev)
        n = self.model.config.num_layers
        layers = list(range(1, n + 1)) if strategy == "joint" else [n]
        epochs = [self.train_epoch_multitask(train, layers, stage=strategy)
                  for _ in range(self.config.epochs)]
        return TrainResult(epochs, [strategy] * len(epochs))

    def slf_run(self, train: dict[str, list[TaskExample]]) -> TrainResult:
        """Stage 1: one epoch per layer ``i`` on ``L_i`` with only layer ``i`` and
        classifier ``i`` trainable. Stage 2: ``max(epochs - n, 1)`` joint epochs."""
        n = self.model.config.num_layers
        epochs, stage_log = [], []
        for i in range(1, n + 1):
            label = f"S1:L{i}"
            epochs.append(self.train_epoch_multitask(train, [i], focus_names(self.model, i),
                                                     lte=False, stage=label))
            stage_log.append(label)
        for _ in range(slf_stage2_epochs(self.config.epochs, n)):
            epochs.append(self.train_epoch_multitask(train, list(range(1, n + 1)), stage="S2"))
            stage_log.append("S2")
        return TrainResult(epochs, stage_log)

    def smart_alternating_run(self, train: dict[str, list[TaskExample]],
                              dev: dict[str, list[TaskExample]] | None) -> TrainResult:
        if not dev or not any(dev.values()):
            raise ConfigError("smart_alternating needs a validation split")
        n = self.model.config.num_layers
        dev_batches = {t: make_batches(ex, 64, self.model.packing_for(t), self.vocab,
                                       self.model.config.max_len)
                       for t, ex in dev.items() if ex}
        switch = AlternatingSwitch(self.config.delta_switch)
        best_snap = self.model.snapshot()
        epochs, stage_log = [], []
        for _ in range(self.config.epochs):
            stage = switch.stage
            if stage == 1:
                stats = self.train_epoch_multitask(train, [n], final_stage_names(self.model),
                                                   stage="stage1")
            else:
                stats = self.train_epoch_multitask(train, list(range(1, n + 1)), stage="stage2")
            stats.dev_score, _ = quick_dev(self.model, dev_batches)
            if switch.best is None or stats.dev_score > switch.best:
                best_snap = self.model.snapshot()
            toggled = switch.observe(stats.dev_score)
            if toggled:
                log.info("epoch %d: dev %.4f, switching to stage %d",
                         stats.epoch, stats.dev_score, switch.stage)
            epochs.append(stats)
            stage_log.append(f"stage{stage}")
        self.model.load_snapshot(best_snap)
        return TrainResult(epochs, stage_log, switch.best, switch.best_epoch)


def slf_stage2_epochs(total_epochs: int, num_layers: int) -> int:
    return max(total_epochs - num_layers, 1)


class AlternatingSwitch:
    """Stage toggling rule: after each epoch, if the dev score beats the best so far by
    less than ``delta``, flip between stage 1 and stage 2."""

    def __init__(self, delta: float = 1e-4):
        self.delta = delta
        self.stage = 1
        self.best: float | None = None
        self.best_epoch: int | None = None
        self.seen = 0

    def observe(self, score: float) -> bool:
        self.seen += 1
        improvement = math.inf if self.best is None else score - self.best
        if self.best is None or score > self.best:
            self.best = score
            self.best_epoch = self.seen
        if improvement < self.delta:
            self.stage = 2 if self.stage == 1 else 1
            return True
        return False


def alternating_stages(scores: list[float], delta: float = 1e-4) -> list[int]:
    """Stage used in each epoch given the dev scores observed after each one."""
    sw = AlternatingSwitch(delta)
    stages = []
    for s in scores:
        stages.append(sw.stage)
        sw.observe(s)
    return stages
