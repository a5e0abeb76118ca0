"""minBERT backbone: embeddings plus a stack of ``LN(h + FFN(LN(h + MH(h))))`` layers.

Parameters live in a flat ``dict[str, Tensor]``. Names:

    embed.tok.weight        (vocab_size, H)
    embed.pos.weight        (max_len, H)
    embed.seg.weight        (2, H)
    embed.ln.weight/bias    (H,)
    layer.{i}.attn.{q,k,v,out}.weight/bias   (H, H) / (H,)
    layer.{i}.ln1.weight/bias                (H,)
    layer.{i}.ffn.in.weight/bias             (H, F) / (F,)
    layer.{i}.ffn.out.weight/bias            (F, H) / (H,)
    layer.{i}.ln2.weight/bias                (H,)

Layers are numbered from 1. Linear weights are stored ``(in, out)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from exitbert import tensor as T
from exitbert.errors import ConfigError, DataError
from exitbert.tensor import Tensor

log = logging.getLogger(__name__)

PAD, UNK, CLS, SEP = 0, 1, 2, 3


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 4
    hidden: int = 64
    num_heads: int = 4
    ffn_width: int = 128
    dropout_p: float = 0.3
    vocab_size: int = 512
    max_len: int = 64
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden % self.num_heads:
            raise ConfigError(
                f"hidden={self.hidden} is not divisible by num_heads={self.num_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must cover the four reserved ids")

    @property
    def head_size(self) -> int:
        return self.hidden // self.num_heads

    @classmethod
    def bert_base(cls, vocab_size: int = 30522) -> EncoderConfig:
        """The full-size profile: 12 layers, hidden 768 over 12 heads of 64."""
        return cls(num_layers=12, hidden=768, num_heads=12, ffn_width=3072,
                   dropout_p=0.3, vocab_size=vocab_size, max_len=512)


@dataclass
class TokenSequence:
    token_ids: list[int]
    segment_ids: list[int]
    attention_mask: list[int] = field(default=None)

    def __post_init__(self):
        if self.attention_mask is None:
            self.attention_mask = [1] * len(self.token_ids)
        if not (len(self.token_ids) == len(self.segment_ids) == len(self.attention_mask)):
            raise DataError("token, segment and mask lists differ in length")

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class LayerStates:
    """Per-layer outputs ``h_1..h_n`` (each ``[B, L, H]``) and their [CLS] rows."""

    hidden: list[Tensor]
    mask: np.ndarray

    @property
    def cls(self) -> list[Tensor]:
        return [h[:, 0, :] for h in self.hidden]

    def __len__(self) -> int:
        return len(self.hidden)


# ---------------------------------------------------------------- parameters

def init_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    H, F = config.hidden, config.ffn_width

    def normal(*shape):
        return Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape), requires_grad=True)

    p = {
        "embed.tok.weight": normal(config.vocab_size, H),
        "embed.pos.weight": normal(config.max_len, H),
        "embed.seg.weight": normal(2, H),
        "embed.ln.weight": ones(H),
        "embed.ln.bias": zeros(H),
    }
    for i in range(1, config.num_layers + 1):
        for name in ("q", "k", "v", "out"):
            p[f"layer.{i}.attn.{name}.weight"] = normal(H, H)
            p[f"layer.{i}.attn.{name}.bias"] = zeros(H)
        p[f"layer.{i}.ln1.weight"] = ones(H)
        p[f"layer.{i}.ln1.bias"] = zeros(H)
        p[f"layer.{i}.ffn.in.weight"] = normal(H, F)
        p[f"layer.{i}.ffn.in.bias"] = zeros(F)
        p[f"layer.{i}.ffn.out.weight"] = normal(F, H)
        p[f"layer.{i}.ffn.out.bias"] = zeros(H)
        p[f"layer.{i}.ln2.weight"] = ones(H)
        p[f"layer.{i}.ln2.bias"] = zeros(H)
    for name, t in p.items():
        t.name = name
    return p


def is_backbone(name: str) -> bool:
    return name.startswith(("embed.", "layer."))


def layer_of(name: str) -> int | None:
    """Layer index of a backbone parameter, ``None`` for embeddings and heads."""
    if name.startswith("layer."):
        return int(name.split(".")[1])
    return None


# ---------------------------------------------------------------- packing

def _as_batch(ids) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    return arr[None, :] if arr.ndim == 1 else arr


def pack_single(tokens: list[int], max_len: int) -> TokenSequence:
    """``[CLS] tokens [SEP]``, truncated to ``max_len``."""
    body = list(tokens)[: max(max_len - 2, 0)]
    if len(body) < len(tokens):
        log.debug("truncated sentence from %d to %d tokens", len(tokens), len(body))
    ids = [CLS] + body + [SEP]
    return TokenSequence(ids, [0] * len(ids))


def truncate_pair(a: list[int], b: list[int], budget: int) -> tuple[list[int], list[int]]:
    """Drop the last token of the longer list (``b`` on ties) until both fit ``budget``."""
    a, b = list(a), list(b)
    dropped = 0
    while len(a) + len(b) > budget and (a or b):
        if len(a) > len(b):
            a.pop()
        else:
            b.pop()
        dropped += 1
    if dropped:
        log.debug("truncated pair by %d tokens", dropped)
    return a, b


def pack_pair_concat_first(a: list[int], b: list[int], max_len: int) -> TokenSequence:
    """``[CLS] a [SEP] b [SEP]`` with segment 0 through the first [SEP], 1 after."""
    a, b = truncate_pair(a, b, max_len - 3)
    ids = [CLS] + a + [SEP] + b + [SEP]
    segs = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return TokenSequence(ids, segs)


def pack_pair_embed_first(a: list[int], b: list[int], max_len: int
                          ) -> tuple[TokenSequence, TokenSequence]:
    """Two independently packed sentences whose lengths sum to at most ``max_len``."""
    a, b = truncate_pair(a, b, max_len - 4)
    seq_a = TokenSequence([CLS] + a + [SEP], [0] * (len(a) + 2))
    seq_b = TokenSequence([CLS] + b + [SEP], [1] * (len(b) + 2))
    return seq_a, seq_b


# ---------------------------------------------------------------- forward pieces

def embed_sum(ids, segments, params: dict[str, Tensor], config: EncoderConfig) -> Tensor:
    """Token + position + segment embeddings, before normalization. ``[B, L, H]``."""
    ids, segments = _as_batch(ids), _as_batch(segments)
    L = ids.shape[1]
    if L > config.max_len:
        raise DataError(f"sequence length {L} exceeds max_len {config.max_len}")
    tok = T.embedding(params["embed.tok.weight"], ids)
    pos = T.embedding(params["embed.pos.weight"], np.arange(L))
    seg = T.embedding(params["embed.seg.weight"], segments)
    return tok + pos + seg


def embed(ids, segments, params: dict[str, Tensor], config: EncoderConfig,
          train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    x = embed_sum(ids, segments, params, config)
    x = T.layer_norm(x, params["embed.ln.weight"], params["embed.ln.bias"], config.layer_norm_eps)
    return T.dropout(x, config.dropout_p, train, rng)


def attention_bias(mask) -> np.ndarray:
    """Additive score bias ``[B, 1, 1, L]``: 0 on kept keys, the sentinel on masked ones."""
    mask = _as_batch(mask).astype(np.float64)
    return ((1.0 - mask) * T.MASK_SENTINEL)[:, None, None, :]


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    B, L, H = x.shape
    return T.transpose(x.reshape(B, L, num_heads, H // num_heads), (0, 2, 1, 3))


def attention_weights(h: Tensor, mask, params: dict[str, Tensor], layer: int,
                      config: EncoderConfig) -> tuple[Tensor, Tensor]:
    """Per-head attention probabilities ``[B, heads, L, L]`` and values ``[B, heads, L, hs]``."""
    pre = f"layer.{layer}.attn."
    q = _split_heads(T.linear(h, params[pre + "q.weight"], params[pre + "q.bias"]), config.num_heads)
    k = _split_heads(T.linear(h, params[pre + "k.weight"], params[pre + "k.bias"]), config.num_heads)
    v = _split_heads(T.linear(h, params[pre + "v.weight"], params[pre + "v.bias"]), config.num_heads)
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(config.head_size))
    scores = scores + attention_bias(mask)
    return T.softmax(scores, axis=-1), v


def multi_head_attention(h: Tensor, mask, params: dict[str, Tensor], layer: int,
                         config: EncoderConfig) -> Tensor:
    probs, v = attention_weights(h, mask, params, layer, config)
    ctx = T.matmul(probs, v)
    B, _, L, _ = ctx.shape
    ctx = T.transpose(ctx, (0, 2, 1, 3)).reshape(B, L, config.hidden)
    pre = f"layer.{layer}.attn.out."
    return T.linear(ctx, params[pre + "weight"], params[pre + "bias"])


def feed_forward(x: Tensor, params: dict[str, Tensor], layer: int) -> Tensor:
    pre = f"layer.{layer}.ffn."
    inner = T.gelu(T.linear(x, params[pre + "in.weight"], params[pre + "in.bias"]))
    return T.linear(inner, params[pre + "out.weight"], params[pre + "out.bias"])


def bert_layer(h: Tensor, mask, params: dict[str, Tensor], layer: int, config: EncoderConfig,
               train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """``LN(h + FFN(LN(h + MH(h))))``; dropout sits on the MH and FFN outputs.

    The outer residual adds the layer input ``h``, not the inner normalized sum.
    """
    p, eps = config.dropout_p, config.layer_norm_eps
    pre = f"layer.{layer}."
    attn = T.dropout(multi_head_attention(h, mask, params, layer, config), p, train, rng)
    inner = T.layer_norm(h + attn, params[pre + "ln1.weight"], params[pre + "ln1.bias"], eps)
    ffn = T.dropout(feed_forward(inner, params, layer), p, train, rng)
    return T.layer_norm(h + ffn, params[pre + "ln2.weight"], params[pre + "ln2.bias"], eps)


def run_layers(h0: Tensor, mask, params: dict[str, Tensor], config: EncoderConfig,
               train: bool = False, rng: np.random.Generator | None = None,
               upto: int | None = None) -> LayerStates:
    mask = _as_batch(mask)
    upto = config.num_layers if upto is None else upto
    hidden = []
    h = h0
    for i in range(1, upto + 1):
        h = bert_layer(h, mask, params, i, config, train, rng)
        hidden.append(h)
    return LayerStates(hidden, mask)


def encode(seq, params: dict[str, Tensor], config: EncoderConfig, train: bool = False,
           rng: np.random.Generator | None = None, perturb: Tensor | None = None) -> LayerStates:
    """Embed then run every layer. ``seq`` is a TokenSequence or ``(ids, segs, mask)`` arrays.

    ``perturb`` is added to the embedding output before layer 1.
    """
    ids, segs, mask = _unpack(seq)
    h0 = embed(ids, segs, params, config, train, rng)
    if perturb is not None:
        h0 = h0 + perturb
    return run_layers(h0, mask, params, config, train, rng)


def embed_pair(a, b, params: dict[str, Tensor], config: EncoderConfig, train: bool = False,
               rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
    """``C = [E_A; E_B]``: each sentence embedded on its own, then joined along the sequence."""
    ids_a, segs_a, mask_a = _unpack(a)
    ids_b, segs_b, mask_b = _unpack(b)
    if ids_a.shape[1] + ids_b.shape[1] > config.max_len:
        raise DataError(
            f"pair length {ids_a.shape[1]}+{ids_b.shape[1]} exceeds max_len {config.max_len}")
    e_a = embed(ids_a, segs_a, params, config, train, rng)
    e_b = embed(ids_b, segs_b, params, config, train, rng)
    return T.concat([e_a, e_b], axis=1), np.concatenate([mask_a, mask_b], axis=1)


def encode_pair_embed_first(a, b, params: dict[str, Tensor], config: EncoderConfig,
                            train: bool = False, rng: np.random.Generator | None = None,
                            perturb: Tensor | None = None) -> LayerStates:
    c, mask = embed_pair(a, b, params, config, train, rng)
    if perturb is not None:
        c = c + perturb
    return run_layers(c, mask, params, config, train, rng)


def _unpack(seq) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(seq, TokenSequence):
        return (_as_batch(seq.token_ids), _as_batch(seq.segment_ids),
                _as_batch(seq.attention_mask))
    ids, segs, mask = seq
    return _as_batch(ids), _as_batch(segs), _as_batch(mask)


class Encoder:
    """Config plus parameter dict, with the module functions bound."""

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor] | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        if params is None:
            params = init_params(config, rng if rng is not None else np.random.default_rng(0))
        self.params = params

    def encode(self, seq, train=False, rng=None, perturb=None) -> LayerStates:
        return encode(seq, self.params, self.config, train, rng, perturb)

    def encode_pair_embed_first(self, a, b, train=False, rng=None, perturb=None) -> LayerStates:
        return encode_pair_embed_first(a, b, self.params, self.config, train, rng, perturb)
