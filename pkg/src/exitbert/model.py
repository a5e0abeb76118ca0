"""Multitask model: shared encoder, one classifier per layer per task, one LTE per task.

Classifier names are ``classifier.{task}.{i}.weight/bias`` for layers ``i = 1..n``;
the layer-``n`` classifier is the task head. ``lte.{task}.weight/bias`` hold the
certainty estimator. The cosine paraphrase head has no classifier parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from exitbert import encoder as E
from exitbert import losses
from exitbert import tensor as T
from exitbert.data import TASKS, TaskBatch
from exitbert.encoder import EncoderConfig, LayerStates
from exitbert.errors import ConfigError
from exitbert.tensor import Tensor

ARITY = {"sst": 5, "para": 1, "sts": 1}
PARA_HEADS = ("logit", "cosine")


@dataclass
class LayerOutput:
    """What the layer-``i`` classifier sees and says for a batch."""

    layer: int
    pooled: Tensor          # [B, H]; sentence A's [CLS] for pairs
    output: Tensor          # [B, 5] logits, or [B] logit / cosine / score


class MultitaskModel:
    def __init__(self, config: EncoderConfig, para_head: str = "logit",
                 packing: str = "concat_first", rng: np.random.Generator | None = None,
                 params: dict[str, Tensor] | None = None):
        if para_head not in PARA_HEADS:
            raise ConfigError(f"para_head must be one of {PARA_HEADS}, got {para_head!r}")
        if packing == "towers":
            # towers is reserved for the cosine paraphrase head; sts always sees a joint stack
            raise ConfigError("model.packing picks the joint-stack packing for pair tasks; "
                              "towers is implied by the cosine paraphrase head")
        self.config = config
        self.para_head = para_head
        self.packing = packing
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = E.init_params(config, rng)
            params.update(init_head_params(config, para_head, rng))
        self.params = params

    # -- parameter groups

    def names(self) -> list[str]:
        return list(self.params)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k].data = v.copy()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def packing_for(self, task: str) -> str:
        if task == "sst":
            return "single"
        if task == "para" and self.para_head == "cosine":
            return "towers"
        return self.packing

    def has_distribution(self, task: str) -> bool:
        """Whether the task's classifiers emit a class distribution (needed for thresholds)."""
        return task == "sst" or (task == "para" and self.para_head == "logit")

    def is_classification(self, task: str) -> bool:
        return task in ("sst", "para")

    # -- forward

    def embeddings(self, batch: TaskBatch, train: bool = False,
                   rng: np.random.Generator | None = None) -> list[tuple[Tensor, np.ndarray]]:
        """Embedding-layer outputs (the tensors that enter layer 1) with their masks."""
        p, cfg = self.params, self.config
        if batch.packing in ("single", "concat_first"):
            ids, segs, mask = batch.inputs[0]
            return [(E.embed(ids, segs, p, cfg, train, rng), mask)]
        if batch.packing == "embed_first":
            c, mask = E.embed_pair(batch.inputs[0], batch.inputs[1], p, cfg, train, rng)
            return [(c, mask)]
        if batch.packing == "towers":
            return [(E.embed(ids, segs, p, cfg, train, rng), mask)
                    for ids, segs, mask in batch.inputs]
        raise ConfigError(f"unknown packing {batch.packing!r}")

    def iter_layers(self, batch: TaskBatch, task: str, train: bool = False,
                    rng: np.random.Generator | None = None,
                    perturb: list[Tensor] | None = None) -> Iterator[LayerOutput]:
        """Run the stack one layer at a time, yielding each classifier's output.

        Stopping iteration early skips the remaining layers entirely.
        """
        self._check_task(batch, task)
        embs = self.embeddings(batch, train, rng)
        hs = []
        for j, (h0, mask) in enumerate(embs):
            hs.append(h0 if perturb is None else h0 + perturb[j])
        masks = [m for _, m in embs]
        for i in range(1, self.config.num_layers + 1):
            hs = [E.bert_layer(h, m, self.params, i, self.config, train, rng)
                  for h, m in zip(hs, masks)]
            yield self.classify(task, i, [h[:, 0, :] for h in hs])

    def forward(self, batch: TaskBatch, task: str, train: bool = False,
                rng: np.random.Generator | None = None,
                perturb: list[Tensor] | None = None) -> list[LayerOutput]:
        return list(self.iter_layers(batch, task, train, rng, perturb))

    def encode(self, batch: TaskBatch, train: bool = False,
               rng: np.random.Generator | None = None) -> list[LayerStates]:
        """Full LayerStates for every encoded stack (two for the towers packing)."""
        out = []
        for h0, mask in self.embeddings(batch, train, rng):
            out.append(E.run_layers(h0, mask, self.params, self.config, train, rng))
        return out

    def classify(self, task: str, layer: int, pooled: list[Tensor]) -> LayerOutput:
        """Apply classifier ``g_layer`` to the pooled [CLS] vector(s)."""
        if task == "para" and self.para_head == "cosine":
            return LayerOutput(layer, pooled[0], losses.cosine_similarity(pooled[0], pooled[1]))
        w = self.params[f"classifier.{task}.{layer}.weight"]
        b = self.params[f"classifier.{task}.{layer}.bias"]
        out = T.linear(pooled[0], w, b)
        if ARITY[task] == 1:
            out = out.reshape(-1)
        return LayerOutput(layer, pooled[0], out)

    def certainty(self, task: str, pooled: Tensor) -> Tensor:
        """LTE certainty ``u = sigmoid(c . h + b)``, one value per row."""
        c = self.params[f"lte.{task}.weight"]
        b = self.params[f"lte.{task}.bias"]
        return T.sigmoid(T.matmul(pooled, c.reshape(-1, 1)).reshape(-1) + b)

    # -- decoding

    def decode(self, task: str, output: Tensor) -> np.ndarray:
        return decode(task, self.para_head, output.data)

    def _check_task(self, batch: TaskBatch, task: str) -> None:
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}")
        if batch.kind != task:
            raise ConfigError(f"batch of kind {batch.kind!r} passed for task {task!r}")
        if batch.packing != self.packing_for(task):
            raise ConfigError(
                f"{task} batch packed as {batch.packing!r}, model expects {self.packing_for(task)!r}")


def decode(task: str, para_head: str, out: np.ndarray) -> np.ndarray:
    """Turn raw classifier outputs into predictions (labels, or scores for sts)."""
    if task == "sst":
        return np.argmax(out, axis=-1)
    if task == "para":
        # sigmoid(z) >= 0.5 exactly when z >= 0
        return (out >= (0.5 if para_head == "cosine" else 0.0)).astype(np.int64)
    return np.array(out, dtype=np.float64)


def init_head_params(config: EncoderConfig, para_head: str,
                     rng: np.random.Generator) -> dict[str, Tensor]:
    H = config.hidden
    p = {}
    for task in TASKS:
        if not (task == "para" and para_head == "cosine"):
            for i in range(1, config.num_layers + 1):
                p[f"classifier.{task}.{i}.weight"] = Tensor(
                    rng.normal(0.0, 0.02, size=(H, ARITY[task])), requires_grad=True)
                p[f"classifier.{task}.{i}.bias"] = Tensor(np.zeros(ARITY[task]), requires_grad=True)
        p[f"lte.{task}.weight"] = Tensor(rng.normal(0.0, 0.02, size=H), requires_grad=True)
        p[f"lte.{task}.bias"] = Tensor(np.zeros(()), requires_grad=True)
    for name, t in p.items():
        t.name = name
    return p


def classifier_layer(name: str) -> int | None:
    if name.startswith("classifier."):
        return int(name.split(".")[2])
    return None
