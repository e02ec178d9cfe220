"""Quaternion attention model (Q-Att) for pairs of sequences.

Pipeline for sequences ``A (ℓa x d)`` and ``B (ℓb x d)`` of quaternions:

1. scores ``E = A ⊗ Bᵀ``                        (Hamilton product, summed over features)
2. ``G = ComponentSoftmax(E)`` over B positions, ``F = ComponentSoftmax(Eᵀ)`` over A positions
3. ``B' = G_r B_r + G_x B_x i + G_y B_y j + G_z B_z k`` (components never mix), likewise ``A'`` from ``F``
4. compare ``C1 = Σ_i QFFN([A'_i; B_i; A'_i ⊗ B_i; A'_i - B_i])`` and ``C2`` symmetrically
5. ``Y = QFFN([C1; C2; C1 ⊗ C2; C1 - C2])``, logits from the real layer on ``[r; x; y; z]``

The same code runs a real decomposable-attention reference when built with
``quaternion=False``: tensors then carry a single component of real width
``4d``, the Hamilton product becomes the elementwise product and every
quaternion layer is a real dense layer of four times the width.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape, eager
from .errors import ContractError, ShapeError
from .qlayers import Embedding, InitSpec, Linear, Module, OutputHead, QLinear, activate

__all__ = [
    "QAttConfig", "AlignmentState", "QAttModel", "cross_scores", "component_softmax",
    "align", "match_features", "compare_aggregate", "qatt_forward",
]


@eager("quat")
def cross_scores(a: Node, b: Node) -> Node:
    """``E[i, j] = Σ_t A[i, t] ⊗ B[j, t]`` for ``A (4, ..., ℓa, d)``, ``B (4, ..., ℓb, d)``."""
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"feature widths differ: {a.shape[-1]} vs {b.shape[-1]}")
    e_t = ad.hamilton_linear(a, b)               # (4, ..., ℓb, ℓa)
    nd = e_t.value.ndim
    return ad.transpose(e_t, tuple(range(nd - 2)) + (nd - 1, nd - 2))


@eager("quat")
def component_softmax(e: Node, axis: int = -1, mask=None) -> Node:
    return ad.component_softmax(e, axis, mask)


@eager("quat")
def align(g: Node, b: Node) -> Node:
    """Per-component weighted sum ``out_c = G_c @ B_c``; components do not mix."""
    if g.shape[0] != b.shape[0] or g.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot align weights {g.shape} with values {b.shape}")
    return ad.matmul(g, b)


def _product(p: Node, q: Node) -> Node:
    # a single leading component marks the real reference model
    return ad.hamilton(p, q) if p.shape[0] == 4 else ad.mul(p, q)


@eager("quat")
def match_features(p: Node, q: Node) -> Node:
    """``[p; q; p ⊗ q; p - q]`` concatenated along the feature axis, per component."""
    if p.shape != q.shape:
        raise ShapeError(f"cannot match {p.shape} with {q.shape}")
    return ad.concat([p, q, _product(p, q), ad.sub(p, q)], axis=-1)


def _token_sum(x: Node, mask) -> Node:
    if mask is not None:
        x = ad.mul(x, np.asarray(mask, dtype=np.float64)[..., None])
    return ad.sum_(x, axis=-2)


@eager("quat")
def compare_aggregate(a: Node, b: Node, a_aligned: Node, b_aligned: Node, layers, act: str = "relu",
                      mask_a=None, mask_b=None):
    """Return ``(C1, C2)``.

    ``a_aligned`` pairs with the rows of ``b`` and ``b_aligned`` with the rows of
    ``a``.  ``layers`` is ``(compare_1, compare_2)``; the same layer may be passed
    twice to share parameters.  Padded positions (mask False) are left out of
    the token sums.
    """
    if a_aligned.shape != b.shape or b_aligned.shape != a.shape:
        raise ShapeError("aligned representations do not conform with their partners")
    first, second = layers
    c1 = _token_sum(activate(first(match_features(a_aligned, b)), act), mask_b)
    c2 = _token_sum(activate(second(match_features(b_aligned, a)), act), mask_a)
    return c1, c2


@dataclass(frozen=True)
class QAttConfig:
    d: int = 8
    hidden_q: int = 8
    num_classes: int = 2
    vocab: int = 50
    activation: str = "relu"
    quaternion: bool = True
    share_compare: bool = False
    project: bool = False
    init: str = "glorot"
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "hidden_q", "num_classes", "vocab"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")


@dataclass
class AlignmentState:
    e: np.ndarray
    g: np.ndarray
    f: np.ndarray
    a_aligned: np.ndarray
    b_aligned: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    y: np.ndarray


class QAttModel(Module):
    """Q-Att classifier, or the real reference model when ``quaternion=False``.

    Token id ``config.vocab`` is the padding row of the embedding table.
    """

    def __init__(self, config: QAttConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, h = config.d, config.hidden_q
        init = InitSpec(config.init, config.seed)
        self.embed = Embedding(config.vocab + 1, 4 * d, rng)
        if config.quaternion:
            def dense(i, o, bias=True):
                return QLinear(i, o, bias=bias, init=init, rng=rng)
        else:
            def dense(i, o, bias=True):
                return Linear(4 * i, 4 * o, bias=bias, rng=rng)
        self.project = dense(d, d) if config.project else None
        self.compare_a = dense(4 * d, h)
        self.compare_b = self.compare_a if config.share_compare else dense(4 * d, h)
        self.aggregate = dense(4 * h, h)
        self.head = OutputHead(h, config.num_classes, rng)

    @property
    def pad_id(self) -> int:
        return self.config.vocab

    def real_equivalent(self) -> QAttModel:
        return QAttModel(replace(self.config, quaternion=False))

    def named_parameters(self, prefix=""):
        seen = set()
        for name, p in super().named_parameters(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def _embed(self, tape: Tape, ids) -> Node:
        x = self.embed(tape, ids)                        # (N, ℓ, 4d)
        if self.project is not None:
            x = activate(self.project.real(x) if self.config.quaternion else self.project(x),
                         self.config.activation)
        if self.config.quaternion:
            return ad.real_to_quat(x)                   # (4, N, ℓ, d)
        return ad.reshape(x, (1,) + x.shape)           # (1, N, ℓ, 4d)

    def encode_pair(self, tape: Tape, a_ids, b_ids, a_mask=None, b_mask=None):
        """Run everything up to the quaternion output ``Y``; return ``(Y, nodes)``."""
        a_ids, b_ids = np.atleast_2d(a_ids), np.atleast_2d(b_ids)
        if a_ids.shape[-1] == 0 or b_ids.shape[-1] == 0:
            raise ContractError("both sequences must be non-empty")
        a = self._embed(tape, a_ids)
        b = self._embed(tape, b_ids)
        if self.config.quaternion:
            e = cross_scores(a, b)
        else:
            e = ad.matmul(a, ad.transpose(b, (0, 1, 3, 2)))
        g_mask = None if b_mask is None else np.asarray(b_mask, bool)[:, None, :]
        f_mask = None if a_mask is None else np.asarray(a_mask, bool)[:, None, :]
        g = ad.softmax(e, -1, g_mask, op="component_softmax")
        f = ad.softmax(ad.transpose(e, (0, 1, 3, 2)), -1, f_mask, op="component_softmax")
        b_aligned = align(g, b)                          # aligned to A's positions
        a_aligned = align(f, a)                          # aligned to B's positions
        act = self.config.activation
        c1, c2 = compare_aggregate(a, b, a_aligned, b_aligned, (self.compare_a, self.compare_b),
                                   act, a_mask, b_mask)
        y = activate(self.aggregate(match_features(c1, c2)), act)
        nodes = dict(e=e, g=g, f=f, a_aligned=a_aligned, b_aligned=b_aligned, c1=c1, c2=c2, y=y)
        return y, nodes

    def logits(self, tape: Tape, a_ids, b_ids, a_mask=None, b_mask=None) -> Node:
        y, _ = self.encode_pair(tape, a_ids, b_ids, a_mask, b_mask)
        if self.config.quaternion:
            return self.head(y)
        return self.head.proj(ad.reshape(y, y.shape[1:]))

    def alignment_state(self, a_ids, b_ids, a_mask=None, b_mask=None) -> AlignmentState:
        _, nodes = self.encode_pair(Tape(), a_ids, b_ids, a_mask, b_mask)
        return AlignmentState(**{k: v.value for k, v in nodes.items()})

    def loss(self, tape: Tape, batch) -> Node:
        logits = self.logits(tape, batch.a_ids, batch.b_ids, batch.a_mask, batch.b_mask)
        return ad.cross_entropy(logits, batch.labels)

    def predict(self, batch) -> np.ndarray:
        logits = self.logits(Tape(), batch.a_ids, batch.b_ids, batch.a_mask, batch.b_mask)
        return np.argmax(logits.value, axis=-1)


def qatt_forward(a_tokens, b_tokens, model: QAttModel) -> np.ndarray:
    """Class logits for a single pair of token sequences."""
    if len(a_tokens) == 0 or len(b_tokens) == 0:
        raise ContractError("both sequences must be non-empty")
    logits = model.logits(Tape(), np.asarray([a_tokens]), np.asarray([b_tokens]))
    return logits.value[0]
