"""Command line entry point: ``exitbert {train,eval,sweep,synth}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from exitbert.config import DEFAULTS, RunConfig, parse_value
from exitbert.data import TASKS, synth_task, write_tsv
from exitbert.errors import ExitBertError
from exitbert.runner import eval_run, train_run

log = logging.getLogger("exitbert")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", help="output directory (output.dir)")
    p.add_argument("--seed", type=int, help="train.seed")
    p.add_argument("--epochs", type=int, help="train.epochs")
    p.add_argument("--strategy", help="train.strategy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exitbert", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + reports")
    _add_config_args(p)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("dev", "test"), default="dev")

    p = sub.add_parser("sweep", help="train once per value of one config key")
    _add_config_args(p)
    p.add_argument("--key", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("synth", help="write a synthetic dataset as TSV")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output TSV path (default synth_<task>.tsv)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ExitBertError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key.strip()] = value.strip()
    if args.out:
        cfg["output.dir"] = args.out
    if args.seed is not None:
        cfg["train.seed"] = args.seed
    if args.epochs is not None:
        cfg["train.epochs"] = args.epochs
    if args.strategy:
        cfg["train.strategy"] = args.strategy
    return cfg


def _sweep_point(task):
    cfg_dict, outdir = task
    report = train_run(RunConfig.from_dict(cfg_dict), outdir)
    return report.dev_score


def sweep(cfg: RunConfig, key: str, values: list[str], jobs: int = 1) -> list[Path]:
    """One training run per value; point ``i`` uses seed ``train.seed + i``."""
    if key not in DEFAULTS:
        raise ExitBertError(f"unknown config key {key!r}")
    root = Path(cfg["output.dir"])
    points = []
    for i, raw in enumerate(values):
        point = cfg.copy()
        point[key] = parse_value(key, raw)
        point["train.seed"] = cfg["train.seed"] + i
        outdir = root / f"point_{i:02d}"
        point["output.dir"] = str(outdir)
        points.append((point.to_dict(), outdir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_sweep_point, points))
    else:
        scores = [_sweep_point(p) for p in points]
    root.mkdir(parents=True, exist_ok=True)
    with (root / "sweep.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", key, "dev_score", "report"])
        for i, (raw, score, (_, outdir)) in enumerate(zip(values, scores, points)):
            w.writerow([i, raw, score, str(outdir / "metrics.json")])
    return [outdir / "metrics.json" for _, outdir in points]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            out = Path(args.out or f"synth_{args.task}.tsv")
            write_tsv(out, synth_task(args.task, args.n, args.seed), args.task)
            print(out)
            return 0
        cfg = resolve_config(args)
        if args.command == "train":
            report = train_run(cfg)
            print(f"dev_score={report.dev_score} -> {cfg['output.dir']}")
        elif args.command == "eval":
            report = eval_run(args.checkpoint, cfg, args.split, cfg["output.dir"])
            print(f"{args.split} dev_score={report.dev_score} -> {cfg['output.dir']}")
        elif args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            for path in sweep(cfg, args.key, values, args.jobs):
                print(path)
    except (ExitBertError, OSError) as err:
        print(f"exitbert: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
