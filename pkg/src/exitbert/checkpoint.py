"""Checkpoint files: a numpy ``.npz`` flat map of parameter name -> array.

Besides the parameters (named as in :mod:`exitbert.encoder` and
:mod:`exitbert.model`) the archive holds a ``__meta__`` entry: a JSON string
with the resolved run configuration and the vocabulary.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from exitbert.errors import DataError
from exitbert.tensor import Tensor

META_KEY = "__meta__"


def save_checkpoint(path, params: dict[str, Tensor], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: t.data for name, t in params.items()}
    arrays[META_KEY] = np.array(json.dumps(meta, sort_keys=True))
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such checkpoint: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z[META_KEY])) if META_KEY in z.files else {}
        params = {name: Tensor(z[name], requires_grad=True, name=name)
                  for name in z.files if name != META_KEY}
    return params, meta
