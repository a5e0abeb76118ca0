"""Tokenization, TSV loading, synthetic tasks and batching."""
from __future__ import annotations

import csv
import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from exitbert.encoder import (PAD, UNK, TokenSequence, pack_pair_concat_first,
                              pack_pair_embed_first, pack_single)
from exitbert.errors import ConfigError, DataError

log = logging.getLogger(__name__)

TASKS = ("sst", "para", "sts")
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
PACKINGS = ("concat_first", "embed_first", "towers")

_LABEL_COLUMN = {"sst": "sentiment", "para": "is_duplicate", "sts": "similarity"}


def tokenize(text: str) -> list[str]:
    out = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


class Vocab:
    """Token/id map with ids 0-3 reserved for [PAD], [UNK], [CLS], [SEP]."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def to_list(self) -> list[str]:
        return list(self.itos[len(RESERVED):])

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocab:
    """Tokens seen at least ``min_count`` times, ordered by count desc then lexicographically."""
    counts: Counter = Counter()
    n = 0
    for text in corpus:
        counts.update(tokenize(text))
        n += 1
    if n == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(kept)


@dataclass
class TaskExample:
    kind: str
    sentence_a: str
    label: float
    id: str
    sentence_b: str | None = None

    def __post_init__(self):
        validate_label(self.kind, self.label, self.sentence_b)


def validate_label(kind: str, label, sentence_b) -> None:
    if kind not in TASKS:
        raise DataError(f"unknown task kind {kind!r}")
    if kind == "sst":
        if sentence_b is not None:
            raise DataError("sst examples carry a single sentence")
        if label not in (0, 1, 2, 3, 4):
            raise DataError(f"sst label {label!r} not in 0..4")
    elif sentence_b is None:
        raise DataError(f"{kind} examples need a second sentence")
    elif kind == "para" and label not in (0, 1):
        raise DataError(f"para label {label!r} not in {{0, 1}}")
    elif kind == "sts" and not 0.0 <= label <= 5.0:
        raise DataError(f"sts label {label!r} outside [0, 5]")


# ---------------------------------------------------------------- TSV

def _parse_label(kind: str, text: str) -> float:
    if kind == "sts":
        return float(text)
    value = float(text)
    if value != int(value):
        raise ValueError(f"non-integer class label {text!r}")
    return int(value)


def load_tsv(path, kind: str) -> list[TaskExample]:
    """Load ``id<TAB>sentence<TAB>sentiment`` (sst) or
    ``id<TAB>sentence1<TAB>sentence2<TAB>label`` (para, sts). Header row required."""
    if kind not in TASKS:
        raise DataError(f"unknown task kind {kind!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    width = 3 if kind == "sst" else 4
    examples = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, header row required")
        if len(header) != width:
            raise DataError(f"{path}:1: header has {len(header)} columns, expected {width}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: {len(row)} columns, expected {width}")
            try:
                label = _parse_label(kind, row[-1])
                if kind == "sst":
                    ex = TaskExample(kind, row[1], label, row[0])
                else:
                    ex = TaskExample(kind, row[1], label, row[0], sentence_b=row[2])
            except (ValueError, DataError) as err:
                raise DataError(f"{path}:{lineno}: {err}") from None
            examples.append(ex)
    return examples


def write_tsv(path, examples: Sequence[TaskExample], kind: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n",
                       escapechar="\\")
        if kind == "sst":
            w.writerow(["id", "sentence", _LABEL_COLUMN[kind]])
            for ex in examples:
                w.writerow([ex.id, ex.sentence_a, ex.label])
        else:
            w.writerow(["id", "sentence1", "sentence2", _LABEL_COLUMN[kind]])
            for ex in examples:
                label = repr(float(ex.label)) if kind == "sts" else ex.label
                w.writerow([ex.id, ex.sentence_a, ex.sentence_b, label])


# ---------------------------------------------------------------- synthetic tasks

SENTIMENT_WORDS = (
    ("awful", "dreadful", "horrible", "atrocious", "abysmal", "unbearable"),
    ("dull", "weak", "flawed", "tedious", "mediocre", "forgettable"),
    ("average", "ordinary", "passable", "routine", "middling", "standard"),
    ("good", "charming", "pleasant", "solid", "enjoyable", "likable"),
    ("brilliant", "superb", "masterful", "stunning", "glorious", "flawless"),
)

FILLER_WORDS = (
    "the film movie story plot cast actor actress director scene script camera "
    "music score ending opening character drama comedy picture screen studio "
    "audience critic season sequel series role voice dialogue setting city house "
    "night morning summer winter river road train ship garden forest mountain "
    "letter friend family mother father brother sister child teacher doctor "
    "soldier stranger village kingdom island market window door table"
).split()

TOPIC_WORDS = [f"{a}{b}" for a in ("ka", "lo", "mi", "ru", "te", "vo", "zu", "pe", "ni", "sa")
               for b in ("ba", "do", "fi", "go", "hu", "ke", "la", "mo", "nu", "ri")]


def sts_label(a: Sequence[str], b: Sequence[str]) -> float:
    """5 * |shared tokens| / max length."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return 5.0 * len(set(a) & set(b)) / longest


def _balanced_labels(n: int, classes: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    return labels


def synth_task(kind: str, n: int, seed: int) -> list[TaskExample]:
    """Desk-scale stand-in data whose labels follow a fixed generating rule.

    sst: one keyword from one of five sentiment families planted among fillers.
    para: sentence b is a shuffled copy of a (label 1) or an unrelated sample (label 0).
    sts: label = 5 * shared-token count / max length.
    """
    if kind not in TASKS:
        raise DataError(f"unknown task kind {kind!r}")
    if n < 10:
        raise DataError(f"synthetic tasks need n >= 10, got {n}")
    rng = np.random.default_rng([seed, TASKS.index(kind)])
    out = []
    if kind == "sst":
        labels = _balanced_labels(n, 5, rng)
        for i, label in enumerate(labels):
            length = int(rng.integers(4, 10))
            words = list(rng.choice(FILLER_WORDS, size=length))
            key = SENTIMENT_WORDS[label][int(rng.integers(len(SENTIMENT_WORDS[label])))]
            words.insert(int(rng.integers(0, length + 1)), key)
            out.append(TaskExample("sst", " ".join(words), int(label), f"sst-{seed}-{i}"))
    elif kind == "para":
        labels = _balanced_labels(n, 2, rng)
        for i, label in enumerate(labels):
            length = int(rng.integers(5, 10))
            a = list(rng.choice(TOPIC_WORDS, size=length, replace=False))
            if label == 1:
                b = list(rng.permutation(a))
            else:
                while True:
                    b = list(rng.choice(TOPIC_WORDS, size=int(rng.integers(5, 10)), replace=False))
                    if sorted(b) != sorted(a):
                        break
            out.append(TaskExample("para", " ".join(a), int(label), f"para-{seed}-{i}",
                                   sentence_b=" ".join(b)))
    else:
        for i in range(n):
            len_a = int(rng.integers(5, 10))
            len_b = int(rng.integers(5, 10)) if rng.random() < 0.7 else len_a
            shared = int(rng.integers(0, min(len_a, len_b) + 1))
            pool = list(rng.choice(TOPIC_WORDS, size=shared + (len_a - shared) + (len_b - shared),
                                   replace=False))
            common = pool[:shared]
            a = common + pool[shared:len_a]
            b = common + pool[len_a:]
            a = list(rng.permutation(a))
            b = list(rng.permutation(b))
            out.append(TaskExample("sts", " ".join(a), sts_label(a, b), f"sts-{seed}-{i}",
                                   sentence_b=" ".join(b)))
    return out


# ---------------------------------------------------------------- batching

@dataclass
class TaskBatch:
    """Padded, packed examples of one task.

    ``inputs`` holds one ``(ids, segments, mask)`` triple for single-sequence
    packings and two for ``embed_first`` and ``towers``.
    """

    kind: str
    packing: str
    inputs: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    labels: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def select(self, index) -> TaskBatch:
        """Sub-batch of the given rows, re-trimmed to its own max length."""
        index = np.atleast_1d(index)
        trimmed = []
        for ids, segs, mask in self.inputs:
            ids, segs, mask = ids[index], segs[index], mask[index]
            width = max(int(mask.sum(axis=1).max()), 1)
            trimmed.append((ids[:, :width], segs[:, :width], mask[:, :width]))
        return TaskBatch(self.kind, self.packing, trimmed, self.labels[index],
                         [self.ids[i] for i in index])


def pad_sequences(seqs: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    segs = np.zeros((len(seqs), width), dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.int64)
    for r, s in enumerate(seqs):
        n = len(s)
        ids[r, :n] = s.token_ids
        segs[r, :n] = s.segment_ids
        mask[r, :n] = s.attention_mask
    return ids, segs, mask


def packing_for(kind: str, packing: str) -> str:
    if kind == "sst":
        return "single"
    if packing not in PACKINGS:
        raise ConfigError(f"unknown packing {packing!r}; choose from {PACKINGS}")
    return packing


def pack_examples(examples: Sequence[TaskExample], vocab: Vocab, packing: str,
                  max_len: int) -> TaskBatch:
    kind = examples[0].kind
    mode = packing_for(kind, packing)
    labels = np.array([ex.label for ex in examples],
                      dtype=np.float64 if kind == "sts" else np.int64)
    ids = [ex.id for ex in examples]
    if mode == "single":
        seqs = [pack_single(vocab.encode(tokenize(ex.sentence_a)), max_len) for ex in examples]
        return TaskBatch(kind, mode, [pad_sequences(seqs)], labels, ids)
    toks = [(vocab.encode(tokenize(ex.sentence_a)), vocab.encode(tokenize(ex.sentence_b)))
            for ex in examples]
    if mode == "concat_first":
        seqs = [pack_pair_concat_first(a, b, max_len) for a, b in toks]
        return TaskBatch(kind, mode, [pad_sequences(seqs)], labels, ids)
    if mode == "embed_first":
        pairs = [pack_pair_embed_first(a, b, max_len) for a, b in toks]
    else:
        pairs = [(pack_single(a, max_len), pack_single(b, max_len)) for a, b in toks]
    return TaskBatch(kind, mode, [pad_sequences([p[0] for p in pairs]),
                                  pad_sequences([p[1] for p in pairs])], labels, ids)


def make_batches(examples: Sequence[TaskExample], batch_size: int, packing: str, vocab: Vocab,
                 max_len: int, seed: int | None = None) -> list[TaskBatch]:
    """Shuffle by ``seed`` (``None`` keeps file order) and cut into padded batches."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if not examples:
        raise DataError("no examples to batch")
    order = np.arange(len(examples))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(examples))
    return [pack_examples([examples[i] for i in order[s:s + batch_size]], vocab, packing, max_len)
            for s in range(0, len(order), batch_size)]
