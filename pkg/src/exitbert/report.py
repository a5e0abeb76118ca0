"""Metrics report and the files a run writes."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from exitbert import metrics
from exitbert.evaluation import TaskResult, dev_score_of

REPORT_KEYS = (
    "sst_accuracy", "para_accuracy", "sts_pearson", "dev_score", "avg_exit_layer",
    "layers_saved_fraction", "exit_policy", "constant_predictions", "notes", "steps",
    "wall_seconds", "config",
)


@dataclass
class MetricsReport:
    sst_accuracy: float | None = None
    para_accuracy: float | None = None
    sts_pearson: float | None = None
    dev_score: float | None = None
    avg_exit_layer: dict[str, float] = field(default_factory=dict)
    layers_saved_fraction: float | None = None
    exit_policy: dict = field(default_factory=dict)
    constant_predictions: list[str] = field(default_factory=list)
    notes: dict[str, str] = field(default_factory=dict)
    steps: int = 0
    wall_seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> MetricsReport:
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def build_report(results: dict[str, TaskResult], n_layers: int, policy, steps: int,
                 wall_seconds: float, config: dict) -> MetricsReport:
    """``policy`` is one ExitPolicy or a task -> ExitPolicy map."""
    policies = policy if isinstance(policy, dict) else {t: policy for t in results}
    rep = MetricsReport(steps=steps, wall_seconds=wall_seconds, config=config,
                        exit_policy={t: {"kind": p.kind, "tau": p.tau}
                                     for t, p in policies.items()})
    scores = {}
    all_exits = []
    for task, res in results.items():
        scores[task] = res.score
        setattr(rep, {"sst": "sst_accuracy", "para": "para_accuracy",
                      "sts": "sts_pearson"}[task], res.score)
        exits = [t.exit_layer for t in res.traces]
        if exits:
            rep.avg_exit_layer[task] = metrics.compute_cost(exits, n_layers)[0]
            all_exits.extend(exits)
        if res.constant:
            rep.constant_predictions.append(task)
            rep.notes[task] = res.note or f"constant {task} predictions ({res.predictions[0]})"
        elif res.note:
            rep.notes[task] = res.note
    if scores:
        rep.dev_score = dev_score_of(scores)
    if all_exits:
        rep.layers_saved_fraction = metrics.compute_cost(all_exits, n_layers)[1]
    return rep


def _format_prediction(task: str, value) -> str:
    if task == "sts":
        return repr(float(np.clip(value, 0.0, 5.0)))
    return str(int(value))


def emit_reports(report: MetricsReport, results: dict[str, TaskResult], outdir,
                 traces: bool = False) -> list[Path]:
    """Write metrics.json, predictions_{task}.csv and (optionally) traces.csv."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        written = [outdir / "metrics.json"]
        written[0].write_text(report.to_json(), encoding="utf-8")
        for task, res in results.items():
            path = outdir / f"predictions_{task}.csv"
            with path.open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["id", "prediction"])
                for ex_id, pred in zip(res.ids, res.predictions):
                    w.writerow([ex_id, _format_prediction(task, pred)])
            written.append(path)
        if traces:
            path = outdir / "traces.csv"
            with path.open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["example_id", "layer", "statistic", "exited"])
                for res in results.values():
                    for tr in res.traces:
                        for layer, stat in enumerate(tr.statistics, start=1):
                            w.writerow([tr.example_id, layer, repr(stat),
                                        int(layer == tr.exit_layer)])
            written.append(path)
    except OSError as err:
        raise OSError(f"failed writing reports to {outdir}: {err}") from err
    return written
