"""Task metrics and compute accounting."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from exitbert.errors import DataError, DegenerateMetricError


def accuracy(preds, golds) -> float:
    preds, golds = np.asarray(preds), np.asarray(golds)
    if preds.shape != golds.shape:
        raise DataError(f"accuracy length mismatch: {preds.shape} vs {golds.shape}")
    if preds.size == 0:
        raise DataError("accuracy of an empty prediction set")
    return float((preds == golds).sum()) / preds.size


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"pearson length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise DataError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        which = "predictions" if sxx == 0.0 else "targets"
        raise DegenerateMetricError(f"pearson undefined: constant {which}")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def dev_score(sst: float | None = None, para: float | None = None,
              sts: float | None = None) -> float:
    """Arithmetic mean of the task scores that are present."""
    present = [s for s in (sst, para, sts) if s is not None]
    if not present:
        raise DataError("dev_score needs at least one task score")
    return math.fsum(present) / len(present)


def compute_cost(exit_layers: Sequence[int], n_layers: int) -> tuple[float, float]:
    """``(mean exit layer, 1 - mean / n_layers)``."""
    if len(exit_layers) == 0:
        raise DataError("compute_cost needs at least one trace")
    avg = math.fsum(exit_layers) / len(exit_layers)
    return avg, 1.0 - avg / n_layers


def is_constant(values) -> bool:
    values = np.asarray(values)
    return values.size > 0 and bool(np.all(values == values.reshape(-1)[0]))
