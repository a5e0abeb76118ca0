"""Flat ``key = value`` run configuration.

Every key has a typed default below; files and ``--set`` overrides are parsed
against that type. Lists are comma separated, booleans accept true/false/1/0.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any

from exitbert.errors import ConfigError

DEFAULTS: dict[str, Any] = {
    # encoder
    "model.num_layers": 4,
    "model.hidden": 64,
    "model.num_heads": 4,
    "model.ffn_width": 128,
    "model.dropout": 0.3,
    "model.max_len": 64,
    "model.para_head": "logit",
    "model.packing": "concat_first",
    # optimizer
    "optimizer.kind": "adamw",
    "optimizer.lr": 1e-3,
    "optimizer.gamma": 0.9,
    "optimizer.betas": (0.9, 0.999),
    "optimizer.eps": 1e-8,
    "optimizer.weight_decay": 0.01,
    "optimizer.clip_norm": 0.0,
    # training
    "train.strategy": "baseline",
    "train.epochs": 5,
    "train.batch_size": 16,
    "train.freeze_mode": "finetune",
    "train.seed": 0,
    "train.delta_switch": 1e-4,
    "train.cosine_margin": 0.0,
    # smart
    "smart.enabled": ("para",),
    "smart.lambda_s": 1.0,
    "smart.epsilon": 1e-5,
    "smart.steps": 1,
    "smart.ascent_lr": 1e-3,
    "smart.init_sigma": 1e-5,
    # early exit
    "exit.kind": "none",
    "exit.tau": 0.9,
    "exit.tau_u": 0.9,
    "exit.lte_enabled": False,
    # data
    "data.tasks": ("sst", "para", "sts"),
    "data.sst_train": "",
    "data.sst_dev": "",
    "data.sst_test": "",
    "data.para_train": "",
    "data.para_dev": "",
    "data.para_test": "",
    "data.sts_train": "",
    "data.sts_dev": "",
    "data.sts_test": "",
    "data.synth_train_n": 400,
    "data.synth_dev_n": 200,
    "data.min_count": 1,
    # output
    "output.dir": "runs/latest",
    "output.traces": False,
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float(text: str) -> float:
    low = text.strip().lower()
    if low in ("inf", "never"):
        return math.inf
    return float(low)


def parse_value(key: str, text: str):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return _parse_float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(s) for s in items)
            return tuple(items)
        return text.strip()
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {err}") from None


class RunConfig:
    """Resolved configuration: defaults, then file, then overrides."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self[k] = v

    def __getitem__(self, key: str):
        return self.values[key]

    def __setitem__(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = parse_value(key, value) if isinstance(value, str) else value

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()

    def copy(self) -> RunConfig:
        return RunConfig(self.values)

    def update_from_lines(self, lines) -> RunConfig:
        for lineno, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                self[key] = value
            except ConfigError as err:
                raise ConfigError(f"line {lineno}: {err}") from None
        return self

    @classmethod
    def from_file(cls, path) -> RunConfig:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"no such config file: {path}")
        return cls().update_from_lines(path.read_text(encoding="utf-8").splitlines())

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for k in DEFAULTS:
            v = self.values[k]
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    def changed(self) -> dict[str, Any]:
        """Keys whose value differs from the default."""
        return {k: v for k, v in self.values.items() if v != DEFAULTS[k]}

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        cfg = cls()
        for k, v in d.items():
            cfg[k] = tuple(v) if isinstance(v, list) else v
        return cfg
