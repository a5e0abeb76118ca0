"""End-to-end runs driven by a :class:`RunConfig`."""
from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np

from exitbert.checkpoint import load_checkpoint, save_checkpoint
from exitbert.config import RunConfig
from exitbert.data import TASKS, TaskExample, Vocab, build_vocab, load_tsv, synth_task
from exitbert.early_exit import ExitPolicy
from exitbert.encoder import EncoderConfig
from exitbert.errors import ConfigError
from exitbert.evaluation import evaluate
from exitbert.model import MultitaskModel
from exitbert.optim import make_optimizer
from exitbert.report import MetricsReport, build_report, emit_reports
from exitbert.smart import SmartConfig
from exitbert.training import TrainConfig, Trainer

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.npz"


def enabled_tasks(cfg: RunConfig) -> list[str]:
    tasks = [t for t in TASKS if t in cfg["data.tasks"]]
    unknown = set(cfg["data.tasks"]) - set(TASKS)
    if unknown or not tasks:
        raise ConfigError(f"data.tasks must name some of {TASKS}, got {cfg['data.tasks']}")
    return tasks


def load_split(cfg: RunConfig, task: str, split: str) -> list[TaskExample]:
    """Examples from ``data.{task}_{split}``, or synthetic ones when the path is empty."""
    path = cfg[f"data.{task}_{split}"]
    if path:
        return load_tsv(path, task)
    seed = cfg["train.seed"]
    if split == "train":
        return synth_task(task, cfg["data.synth_train_n"], seed)
    offset = {"dev": 1, "test": 2}[split]
    return synth_task(task, cfg["data.synth_dev_n"], seed + 100_003 * offset)


def corpus_of(examples: dict[str, list[TaskExample]]):
    for exs in examples.values():
        for ex in exs:
            yield ex.sentence_a
            if ex.sentence_b is not None:
                yield ex.sentence_b


def encoder_config(cfg: RunConfig, vocab_size: int) -> EncoderConfig:
    return EncoderConfig(num_layers=cfg["model.num_layers"], hidden=cfg["model.hidden"],
                         num_heads=cfg["model.num_heads"], ffn_width=cfg["model.ffn_width"],
                         dropout_p=cfg["model.dropout"], vocab_size=vocab_size,
                         max_len=cfg["model.max_len"])


def exit_policy(cfg: RunConfig) -> ExitPolicy:
    kind = cfg["exit.kind"]
    if kind == "threshold":
        return ExitPolicy.threshold(cfg["exit.tau"])
    if kind == "lte":
        return ExitPolicy.lte(cfg["exit.tau_u"])
    return ExitPolicy(kind)


def task_policies(cfg: RunConfig, model: MultitaskModel, tasks) -> dict[str, ExitPolicy]:
    """The configured policy per task; threshold exiting falls back to LTE where the
    task's classifier has no class distribution (sts, cosine paraphrase head)."""
    policy = exit_policy(cfg)
    out = {}
    for t in tasks:
        if policy.kind == "threshold" and not model.has_distribution(t):
            out[t] = ExitPolicy.lte(cfg["exit.tau_u"])
        else:
            out[t] = policy
    return out


def smart_config(cfg: RunConfig) -> SmartConfig:
    return SmartConfig(lambda_s=cfg["smart.lambda_s"], epsilon=cfg["smart.epsilon"],
                       steps=cfg["smart.steps"], ascent_lr=cfg["smart.ascent_lr"],
                       init_sigma=cfg["smart.init_sigma"], tasks=tuple(cfg["smart.enabled"]))


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(strategy=cfg["train.strategy"], epochs=cfg["train.epochs"],
                       batch_size=cfg["train.batch_size"], freeze_mode=cfg["train.freeze_mode"],
                       seed=cfg["train.seed"], delta_switch=cfg["train.delta_switch"],
                       lte_enabled=cfg["exit.lte_enabled"],
                       cosine_margin=cfg["train.cosine_margin"])


def build_model(cfg: RunConfig, vocab: Vocab) -> MultitaskModel:
    return MultitaskModel(encoder_config(cfg, len(vocab)), para_head=cfg["model.para_head"],
                          packing=cfg["model.packing"],
                          rng=np.random.default_rng([cfg["train.seed"], 0]))


def train_run(cfg: RunConfig, outdir=None) -> MetricsReport:
    """Train per ``cfg``, score the dev split, write checkpoint and reports."""
    outdir = Path(outdir or cfg["output.dir"])
    start = time.perf_counter()
    tasks = enabled_tasks(cfg)
    tcfg = train_config(cfg)
    train = {t: load_split(cfg, t, "train") for t in tasks}
    dev = {t: load_split(cfg, t, "dev") for t in tasks}
    vocab = build_vocab(corpus_of(train), cfg["data.min_count"])
    model = build_model(cfg, vocab)
    policies = task_policies(cfg, model, tasks)
    opt = make_optimizer(cfg["optimizer.kind"], model.params, cfg["optimizer.lr"],
                         gamma=cfg["optimizer.gamma"], betas=cfg["optimizer.betas"],
                         weight_decay=cfg["optimizer.weight_decay"], eps=cfg["optimizer.eps"],
                         clip_norm=cfg["optimizer.clip_norm"])
    trainer = Trainer(model, opt, tcfg, vocab, smart_config(cfg))
    result = trainer.run(train, dev)
    save_checkpoint(outdir / CHECKPOINT_NAME, model.params,
                    {"config": cfg.to_dict(), "vocab": vocab.to_list()})
    results = evaluate(model, dev, vocab, policies, tcfg.batch_size)
    report = build_report(results, model.config.num_layers, policies, result.steps,
                          time.perf_counter() - start, cfg.to_dict())
    emit_reports(report, results, outdir, traces=_tracing(cfg))
    log.info("dev score %s after %d steps", report.dev_score, report.steps)
    return report


def load_model(path) -> tuple[MultitaskModel, Vocab, RunConfig]:
    params, meta = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta.get("config", {}))
    vocab = Vocab(meta.get("vocab", []))
    model = MultitaskModel(encoder_config(cfg, len(vocab)), para_head=cfg["model.para_head"],
                           packing=cfg["model.packing"], params=params)
    return model, vocab, cfg


def eval_run(checkpoint, cfg: RunConfig | None = None, split: str = "dev",
             outdir=None) -> MetricsReport:
    """Score a saved model on a split.

    data/exit/output keys of ``cfg`` that differ from the defaults override the
    configuration stored in the checkpoint."""
    start = time.perf_counter()
    model, vocab, saved = load_model(checkpoint)
    run = saved.copy()
    if cfg is not None:
        for key, value in cfg.changed().items():
            if key.startswith(("data.", "exit.", "output.")):
                run[key] = value
    outdir = Path(outdir or run["output.dir"])
    tasks = enabled_tasks(run)
    policies = task_policies(run, model, tasks)
    examples = {t: load_split(run, t, split) for t in tasks}
    results = evaluate(model, examples, vocab, policies, run["train.batch_size"])
    report = build_report(results, model.config.num_layers, policies, 0,
                          time.perf_counter() - start, run.to_dict())
    emit_reports(report, results, outdir, traces=_tracing(run))
    return report


def _tracing(cfg: RunConfig) -> bool:
    return cfg["output.traces"] and cfg["exit.kind"] != "none"
