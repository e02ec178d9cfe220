"""Quaternion Transformer.

Variants
--------
``real``     the ordinary Transformer (reference model)
``partial``  quaternion Q/K/V and attention-output projections (self- and
             cross-attention); real position-wise FFNs
``full``     every linear map inside the blocks is quaternion, FFNs included

The residual stream is a real array of width ``D = 4 d_q`` read as the
``[r | x | y | z]`` blocks of a ``d_q``-wide quaternion vector.  Residual
additions, layer normalization, positional encodings, embeddings and the output
projection act on that real vector in every variant.

Quaternion attention follows ``ComponentSoftmax((Q ⊗ K) / sqrt(d_k)) V``: the
Hamilton product yields four ``ℓ x ℓ`` score matrices, each softmaxed on its
own and applied to the matching component of ``V``.  Heads partition the
quaternion feature axis; ``d_k`` is the per-head real width ``4 d_q / heads``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape, eager
from .errors import ConfigError, ContractError, ShapeError, VocabError
from .qattention import align, cross_scores
from .qlayers import Embedding, InitSpec, LayerNorm, Linear, Module, QLinear, activate
from .tasks import CHARSET, Charset, pad_sequences

__all__ = [
    "VARIANTS", "QTransformerConfig", "MultiHeadAttention", "FeedForward", "EncoderBlock",
    "DecoderBlock", "Seq2SeqTransformer", "TransformerClassifier", "Seq2SeqBatch",
    "qkv_project", "q_self_attention", "q_transformer_block", "sinusoidal_positions",
    "causal_mask",
]

VARIANTS = ("real", "partial", "full")
_ALIASES = {"real-baseline": "real", "q-partial": "partial", "q-full": "full"}


@dataclass(frozen=True)
class QTransformerConfig:
    """Transformer hyperparameters.

    ``d_q`` is the quaternion model width (real width ``4 d_q``); ``ffn_hidden``
    is in real units and defaults to ``4 * 4 d_q``.  ``num_classes`` is only used
    by :class:`TransformerClassifier`.
    """

    variant: str = "full"
    layers: int = 1
    d_q: int = 8
    heads: int = 1
    ffn_hidden: int | None = None
    vocab: int = len(CHARSET)
    max_len: int = 64
    num_classes: int = 2
    pad_id: int = 0
    seed: int = 0
    init: str = "glorot"

    def __post_init__(self):
        variant = _ALIASES.get(self.variant, self.variant)
        if variant not in VARIANTS:
            raise ConfigError("variant", f"expected one of {VARIANTS}, got {self.variant!r}")
        object.__setattr__(self, "variant", variant)
        if self.ffn_hidden is None:
            object.__setattr__(self, "ffn_hidden", 16 * self.d_q)
        for name in ("layers", "d_q", "heads", "ffn_hidden", "vocab", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.d_q % self.heads:
            raise ConfigError("heads", f"must divide the quaternion width d_q={self.d_q}")
        if self.ffn_hidden % 4:
            raise ConfigError("ffn_hidden", "must be divisible by 4")

    @property
    def width(self) -> int:
        return 4 * self.d_q

    @property
    def d_k(self) -> int:
        return self.width // self.heads

    @property
    def quaternion_attention(self) -> bool:
        return self.variant != "real"

    @property
    def quaternion_ffn(self) -> bool:
        return self.variant == "full"


def _dense(in_real: int, out_real: int, quaternion: bool, bias: bool, rng, init: InitSpec):
    if quaternion:
        return QLinear(in_real // 4, out_real // 4, bias=bias, init=init, rng=rng)
    return Linear(in_real, out_real, bias=bias, rng=rng)


def _apply(layer, x: Node) -> Node:
    return layer.real(x) if isinstance(layer, QLinear) else layer(x)


def causal_mask(length: int) -> np.ndarray:
    """``(ℓ, ℓ)`` boolean mask, True where position ``t`` may attend to ``s <= t``."""
    return np.tril(np.ones((length, length), dtype=bool))


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(width // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / width)
    out = np.zeros((length, width))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle[:, : width // 2])
    return out


@eager("quat")
def qkv_project(x: Node, w_q: QLinear, w_k: QLinear, w_v: QLinear):
    """Quaternion projections ``W_q ⊗ X``, ``W_k ⊗ X``, ``W_v ⊗ X`` of ``X (4, ..., ℓ, d_q)``."""
    return w_q(x), w_k(x), w_v(x)


@eager("quat")
def q_self_attention(q: Node, k: Node, v: Node, d_k: int, mask=None, return_weights: bool = False):
    """``ComponentSoftmax((Q ⊗ K) / sqrt(d_k)) V`` with per-component value mixing.

    ``q`` is ``(4, ..., ℓq, d)``, ``k`` and ``v`` are ``(4, ..., ℓk, d)``; ``mask``
    (True = attend) broadcasts against ``(..., ℓq, ℓk)`` and applies identically
    to all four score matrices.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if v.shape[-2] != k.shape[-2]:
        raise ShapeError(f"value length {v.shape[-2]} != key length {k.shape[-2]}")
    scores = ad.scale(cross_scores(q, k), 1.0 / math.sqrt(d_k))
    weights = ad.component_softmax(scores, -1, mask)
    out = align(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    def __init__(self, config: QTransformerConfig, rng, quaternion: bool):
        init = InitSpec(config.init, config.seed)
        width = config.width
        self.heads = config.heads
        self.d_q = config.d_q
        self.quaternion = quaternion
        self.w_q = _dense(width, width, quaternion, False, rng, init)
        self.w_k = _dense(width, width, quaternion, False, rng, init)
        self.w_v = _dense(width, width, quaternion, False, rng, init)
        self.w_o = _dense(width, width, quaternion, False, rng, init)

    def _split_heads(self, x: Node) -> Node:
        n, length, _ = x.shape
        if self.quaternion:
            # (N, ℓ, [4][h][dh]) -> (4, N, h, ℓ, dh)
            x = ad.reshape(x, (n, length, 4, self.heads, self.d_q // self.heads))
            return ad.transpose(x, (2, 0, 3, 1, 4))
        x = ad.reshape(x, (n, length, self.heads, 4 * self.d_q // self.heads))
        return ad.transpose(x, (0, 2, 1, 3))

    def _merge_heads(self, x: Node) -> Node:
        if self.quaternion:
            _, n, _, length, _ = x.shape
            x = ad.transpose(x, (1, 3, 0, 2, 4))
        else:
            n, _, length, _ = x.shape
            x = ad.transpose(x, (0, 2, 1, 3))
        return ad.reshape(x, (n, length, 4 * self.d_q))

    def __call__(self, x_q: Node, x_kv: Node, mask=None, return_weights: bool = False):
        """Attend from ``x_q (N, ℓq, D)`` to ``x_kv (N, ℓk, D)``.

        ``mask`` is boolean, broadcastable to ``(N, ℓq, ℓk)``.
        """
        d_k = 4 * self.d_q // self.heads
        q = self._split_heads(_apply(self.w_q, x_q))
        k = self._split_heads(_apply(self.w_k, x_kv))
        v = self._split_heads(_apply(self.w_v, x_kv))
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            mask = mask.reshape(mask.shape[:-2] + (1,) + mask.shape[-2:]) if mask.ndim == 3 else mask
        if self.quaternion:
            out, weights = q_self_attention(q, k, v, d_k, mask, return_weights=True)
        else:
            scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d_k))
            weights = ad.softmax(scores, -1, mask)
            out = ad.matmul(weights, v)
        out = _apply(self.w_o, self._merge_heads(out))
        return (out, weights) if return_weights else out


class FeedForward(Module):
    def __init__(self, config: QTransformerConfig, rng):
        init = InitSpec(config.init, config.seed)
        quaternion = config.quaternion_ffn
        self.inner = _dense(config.width, config.ffn_hidden, quaternion, True, rng, init)
        self.outer = _dense(config.ffn_hidden, config.width, quaternion, True, rng, init)

    def __call__(self, x: Node) -> Node:
        return _apply(self.outer, activate(_apply(self.inner, x), "relu"))


class EncoderBlock(Module):
    """Self-attention and FFN sublayers, each with residual add then layer norm."""

    def __init__(self, config: QTransformerConfig, rng):
        self.attn = MultiHeadAttention(config, rng, config.quaternion_attention)
        self.norm1 = LayerNorm(config.width)
        self.ffn = FeedForward(config, rng)
        self.norm2 = LayerNorm(config.width)

    def __call__(self, x: Node, mask=None) -> Node:
        x = self.norm1(ad.add(x, self.attn(x, x, mask)))
        return self.norm2(ad.add(x, self.ffn(x)))


class DecoderBlock(Module):
    def __init__(self, config: QTransformerConfig, rng):
        self.self_attn = MultiHeadAttention(config, rng, config.quaternion_attention)
        self.norm1 = LayerNorm(config.width)
        self.cross_attn = MultiHeadAttention(config, rng, config.quaternion_attention)
        self.norm2 = LayerNorm(config.width)
        self.ffn = FeedForward(config, rng)
        self.norm3 = LayerNorm(config.width)

    def __call__(self, x: Node, memory: Node, self_mask=None, memory_mask=None) -> Node:
        x = self.norm1(ad.add(x, self.self_attn(x, x, self_mask)))
        x = self.norm2(ad.add(x, self.cross_attn(x, memory, memory_mask)))
        return self.norm3(ad.add(x, self.ffn(x)))


def q_transformer_block(block: EncoderBlock, x, mask=None) -> np.ndarray | Node:
    """Run one encoder block on a real ``(N, ℓ, 4 d_q)`` input (array or node)."""
    if isinstance(x, Node):
        return block(x, mask)
    return block(Tape().constant(x), mask).value


class _TransformerBase(Module):
    def _check_ids(self, ids: np.ndarray) -> None:
        cfg = self.config
        if ids.shape[-1] > cfg.max_len:
            raise ContractError(f"sequence length {ids.shape[-1]} exceeds max_len {cfg.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab):
            raise VocabError(f"token id outside vocabulary of size {cfg.vocab}")

    def _embed(self, tape: Tape, ids: np.ndarray) -> Node:
        self._check_ids(ids)
        x = ad.scale(self.embed(tape, ids), math.sqrt(self.config.width))
        return ad.add(x, self._positions[: ids.shape[-1]])

    def real_equivalent(self):
        return type(self)(replace(self.config, variant="real"))


class Seq2SeqTransformer(_TransformerBase):
    """Encoder-decoder Transformer over a shared token vocabulary."""

    def __init__(self, config: QTransformerConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.embed = Embedding(config.vocab, config.width, rng)
        self.encoder = [EncoderBlock(config, rng) for _ in range(config.layers)]
        self.decoder = [DecoderBlock(config, rng) for _ in range(config.layers)]
        self.out = Linear(config.width, config.vocab, bias=True, rng=rng, kind="head", zero_init=True)
        self._positions = sinusoidal_positions(config.max_len, config.width)

    def encode(self, tape: Tape, src: np.ndarray, src_mask: np.ndarray | None = None) -> Node:
        x = self._embed(tape, src)
        key_mask = None if src_mask is None else src_mask[:, None, :]
        for block in self.encoder:
            x = block(x, key_mask)
        return x

    def decode(self, tape: Tape, tgt_in: np.ndarray, memory: Node, src_mask=None, tgt_mask=None) -> Node:
        length = tgt_in.shape[-1]
        self_mask = causal_mask(length)[None]
        if tgt_mask is not None:
            self_mask = self_mask & tgt_mask[:, None, :]
        memory_mask = None if src_mask is None else src_mask[:, None, :]
        x = self._embed(tape, tgt_in)
        for block in self.decoder:
            x = block(x, memory, self_mask, memory_mask)
        return self.out(x)

    def forward(self, tape: Tape, src, tgt_in, src_mask=None, tgt_mask=None) -> Node:
        """Logits ``(N, ℓt, vocab)`` for teacher-forced decoder inputs."""
        src, tgt_in = np.atleast_2d(src), np.atleast_2d(tgt_in)
        if src.shape[-1] == 0:
            raise ContractError("source sequence is empty")
        memory = self.encode(tape, src, src_mask)
        return self.decode(tape, tgt_in, memory, src_mask, tgt_mask)

    def loss(self, tape: Tape, batch: Seq2SeqBatch) -> Node:
        logits = self.forward(tape, batch.src, batch.tgt_in, batch.src_mask, batch.tgt_mask)
        return ad.cross_entropy(logits, batch.tgt_out, batch.tgt_mask)

    def greedy_decode(self, sources, max_len: int | None = None) -> list[tuple[int, ...]]:
        """Greedy decoding until EOS (excluded from the output) or ``max_len`` tokens."""
        cfg = self.config
        max_len = cfg.max_len - 1 if max_len is None else min(max_len, cfg.max_len - 1)
        if any(len(s) == 0 for s in sources):
            raise ContractError("source sequence is empty")
        src, src_mask = pad_sequences(sources, cfg.pad_id)
        memory = self.encode(Tape(), src, src_mask)
        n = len(sources)
        out = np.full((n, 1), Charset.BOS, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        for _ in range(max_len):
            step = Tape()
            logits = self.decode(step, out, step.constant(memory.value), src_mask)
            nxt = np.argmax(logits.value[:, -1], axis=-1)
            nxt = np.where(done, cfg.pad_id, nxt)
            out = np.concatenate([out, nxt[:, None]], axis=1)
            done |= nxt == Charset.EOS
            if done.all():
                break
        result = []
        for row in out[:, 1:]:
            seq = []
            for t in row:
                if t == Charset.EOS or t == cfg.pad_id:
                    break
                seq.append(int(t))
            result.append(tuple(seq))
        return result


class TransformerClassifier(_TransformerBase):
    """Encoder stack, masked mean pooling and a real classification layer."""

    def __init__(self, config: QTransformerConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.embed = Embedding(config.vocab, config.width, rng)
        self.encoder = [EncoderBlock(config, rng) for _ in range(config.layers)]
        self.out = Linear(config.width, config.num_classes, bias=True, rng=rng, kind="head", zero_init=True)
        self._positions = sinusoidal_positions(config.max_len, config.width)

    def logits(self, tape: Tape, ids, mask=None) -> Node:
        ids = np.atleast_2d(ids)
        mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        x = self._embed(tape, ids)
        for block in self.encoder:
            x = block(x, mask[:, None, :])
        weights = mask / mask.sum(axis=-1, keepdims=True)
        pooled = ad.sum_(ad.mul(x, weights[..., None]), axis=1)
        return self.out(pooled)

    def loss(self, tape: Tape, batch) -> Node:
        return ad.cross_entropy(self.logits(tape, batch.ids, batch.mask), batch.labels)

    def predict(self, batch) -> np.ndarray:
        return np.argmax(self.logits(Tape(), batch.ids, batch.mask).value, axis=-1)


@dataclass
class Seq2SeqBatch:
    src: np.ndarray
    src_mask: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray

    @classmethod
    def from_pairs(cls, pairs, pad_id: int = Charset.PAD) -> Seq2SeqBatch:
        """Build teacher-forcing arrays from ``(source_ids, target_ids)`` pairs."""
        src, src_mask = pad_sequences([p[0] for p in pairs], pad_id)
        tgt_in, _ = pad_sequences([(Charset.BOS,) + tuple(p[1]) for p in pairs], pad_id)
        tgt_out, tgt_mask = pad_sequences([tuple(p[1]) + (Charset.EOS,) for p in pairs], pad_id)
        return cls(src, src_mask, tgt_in, tgt_out, tgt_mask)
