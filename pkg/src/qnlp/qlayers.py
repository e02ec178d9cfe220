"""Trainable quaternion layers and their real-valued counterparts.

Layers own :class:`Parameter` objects holding numpy arrays.  A forward pass
binds them onto a :class:`~qnlp.autodiff.Tape` as trainable leaves, so the same
layer can be evaluated eagerly or differentiated.

Every parameter carries a ``kind`` used by :func:`param_count`:

``weight``     transform weight matrices (the quantities compared quaternion vs real)
``bias``       additive biases
``embedding``  token embedding tables
``norm``       layer-normalization gains and offsets
``head``       the final real output layer
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape, eager
from .errors import ContractError, ShapeError, VocabError
from .qcore import Quaternion, QTensor, hamilton_block

__all__ = [
    "Parameter", "Module", "InitSpec", "QLinear", "Linear", "Embedding", "LayerNorm",
    "OutputHead", "ParamReport", "ACTIVATIONS", "activate", "hamilton_matrix_form",
    "qffn_forward", "init_params", "glorot_bound", "polar_quaternions",
    "param_count", "real_to_quaternion", "quaternion_to_real", "embed_project",
    "classify", "softmax_cross_entropy",
]

ACTIVATIONS = {
    "tanh": ad.tanh,
    "relu": ad.relu,
    "identity": ad.identity,
}


def activate(x: Node, kind: str) -> Node:
    """Apply an activation to every component independently."""
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None


class Parameter:
    """A trainable real array with a role tag."""

    def __init__(self, value, kind: str = "weight"):
        self.value = np.asarray(value, dtype=np.float64)
        self.kind = kind

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def shape(self):
        return self.value.shape

    def bind(self, tape: Tape) -> Node:
        return tape.parameter(self.value, owner=self)

    def __repr__(self):
        return f"Parameter(kind={self.kind!r}, shape={self.value.shape})"


class Module:
    """Container walking its attributes for parameters, in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ContractError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            if p.value.shape != tuple(state[name].shape):
                raise ShapeError(f"{name}: expected {p.value.shape}, got {state[name].shape}")
            p.value = np.array(state[name], dtype=np.float64)


# -- initialization ---------------------------------------------------------------

@dataclass(frozen=True)
class InitSpec:
    """Weight initialization scheme.

    ``glorot`` draws the four component matrices independently from the uniform
    Glorot range; ``polar`` draws ``|w| (cos θ + u sin θ)`` with ``θ ~ U[-π, π]``,
    ``u`` a unit pure-imaginary quaternion built from ``U[0, 1]`` samples and
    ``|w| ~ U[0, bound]``.
    """

    scheme: str = "glorot"
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("glorot", "polar"):
            raise ContractError(f"unknown init scheme {self.scheme!r}")


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def polar_quaternions(rng: np.random.Generator, shape, bound: float):
    """Sample quaternions in polar form.

    Returns ``(weights, modulus, theta)`` where ``weights`` is ``(4, *shape)``.
    """
    shape = tuple(shape)
    theta = rng.uniform(-np.pi, np.pi, size=shape)
    modulus = rng.uniform(0.0, bound, size=shape)
    imag = rng.uniform(0.0, 1.0, size=(3,) + shape)
    norm = np.sqrt(np.sum(imag ** 2, axis=0))
    imag = imag / np.where(norm == 0.0, 1.0, norm)
    weights = np.concatenate([(modulus * np.cos(theta))[None], modulus * np.sin(theta) * imag])
    return weights, modulus, theta


def init_params(spec: InitSpec, layer: QLinear, rng: np.random.Generator | None = None) -> QLinear:
    """(Re)initialize a quaternion layer's weight in place and return it.

    Without ``rng`` the generator is seeded from ``spec.seed``, so the same spec
    always produces the same weights.  Biases are reset to zero.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    bound = glorot_bound(4 * layer.in_q, 4 * layer.out_q)
    shape = (layer.out_q, layer.in_q)
    if spec.scheme == "glorot":
        w = rng.uniform(-bound, bound, size=(4,) + shape)
    else:
        w, _, _ = polar_quaternions(rng, shape, bound)
    layer.weight.value = w
    if layer.bias is not None:
        layer.bias.value = np.zeros((4, layer.out_q))
    return layer


# -- layers --------------------------------------------------------------------------

class QLinear(Module):
    """Quaternion dense layer ``y = W ⊗ x + b``.

    ``weight`` is a ``(4, out_q, in_q)`` component-major quaternion matrix; the
    layer holds ``4 * in_q * out_q`` weight scalars against the
    ``16 * in_q * out_q`` of a real layer mapping the same real widths.
    """

    def __init__(self, in_q: int, out_q: int, bias: bool = True, init: InitSpec | None = None,
                 rng: np.random.Generator | None = None):
        if in_q < 0 or out_q < 0:
            raise ShapeError("layer widths must be non-negative")
        self.in_q = in_q
        self.out_q = out_q
        self.weight = Parameter(np.zeros((4, out_q, in_q)), "weight")
        self.bias = Parameter(np.zeros((4, out_q)), "bias") if bias else None
        init_params(init or InitSpec(), self, rng)

    def __call__(self, x: Node) -> Node:
        """Apply to a component-major quaternion node ``(4, ..., in_q)``."""
        if x.shape[-1] != self.in_q:
            raise ShapeError(f"input width {x.shape[-1]} != layer in_q {self.in_q}")
        if x.value.ndim == 2:                                   # a single quaternion vector
            return ad.reshape(self(ad.reshape(x, (4, 1, self.in_q))), (4, self.out_q))
        out = ad.hamilton_linear(self.weight.bind(x.tape), x)
        if self.bias is not None:
            b = self.bias.bind(x.tape)
            out = ad.add(out, ad.reshape(b, (4,) + (1,) * (x.value.ndim - 2) + (self.out_q,)))
        return out

    def real(self, x: Node) -> Node:
        """Apply to a real node ``(..., 4 in_q)`` read as ``[r|x|y|z]`` blocks."""
        return ad.quat_to_real(self(ad.real_to_quat(x)))

    def block_matrix(self) -> np.ndarray:
        """The equivalent real ``(4 out_q, 4 in_q)`` weight matrix."""
        return hamilton_block(self.weight.value)

    def real_equivalent(self) -> Linear:
        return Linear(4 * self.in_q, 4 * self.out_q, bias=self.bias is not None)


class Linear(Module):
    """Real dense layer ``y = x W + b`` with ``W`` of shape ``(in, out)``.

    ``zero_init`` starts the weight at zero, used for output layers so an
    untrained model predicts the uniform distribution.
    """

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: np.random.Generator | None = None, kind: str = "weight", zero_init: bool = False):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_features = in_features
        self.out_features = out_features
        shape = (in_features, out_features)
        if zero_init:
            w = np.zeros(shape)
        else:
            bound = glorot_bound(in_features, out_features) if in_features + out_features else 0.0
            w = rng.uniform(-bound, bound, size=shape)
        self.weight = Parameter(w, kind)
        self.bias = Parameter(np.zeros(out_features), "bias" if kind == "weight" else kind) if bias else None

    def __call__(self, x: Node) -> Node:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"input width {x.shape[-1]} != layer width {self.in_features}")
        if x.value.ndim == 1:
            return ad.reshape(self(ad.reshape(x, (1, self.in_features))), (self.out_features,))
        out = ad.matmul(x, self.weight.bind(x.tape))
        if self.bias is not None:
            out = ad.add(out, self.bias.bind(x.tape))
        return out

    def real_equivalent(self) -> Linear:
        return self


class Embedding(Module):
    def __init__(self, rows: int, width: int, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.rows = rows
        self.width = width
        self.table = Parameter(rng.normal(0.0, width ** -0.5, size=(rows, width)), "embedding")

    def __call__(self, tape: Tape, ids) -> Node:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.rows):
            raise VocabError(f"token id outside table of {self.rows} rows")
        return ad.embedding(self.table.bind(tape), ids)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-6):
        self.eps = eps
        self.gain = Parameter(np.ones(width), "norm")
        self.offset = Parameter(np.zeros(width), "norm")

    def __call__(self, x: Node) -> Node:
        y = ad.layer_norm(x, self.eps)
        return ad.add(ad.mul(y, self.gain.bind(x.tape)), self.offset.bind(x.tape))


class OutputHead(Module):
    """Final real layer over the concatenated ``[r; x; y; z]`` components."""

    def __init__(self, d: int, num_classes: int, rng: np.random.Generator | None = None):
        self.d = d
        self.num_classes = num_classes
        self.proj = Linear(4 * d, num_classes, bias=True, rng=rng, kind="head", zero_init=True)

    def __call__(self, q: Node) -> Node:
        return classify(self, q)


# -- functional API --------------------------------------------------------------------

def hamilton_matrix_form(w: Quaternion) -> np.ndarray:
    """4x4 real matrix ``M`` with ``M @ [r, x, y, z] == w ⊗ q``."""
    return hamilton_block(w.as_array().reshape(4, 1, 1))


@eager("quat")
def qffn_forward(layer: QLinear, act: str, x: Node) -> Node:
    """Quaternion feed-forward: ``act(W ⊗ x + b)`` with a component-wise activation."""
    return activate(layer(x), act)


def real_to_quaternion(v) -> QTensor:
    """Split a real ``(..., 4d)`` array into contiguous ``[r | x | y | z]`` blocks."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] % 4:
        raise ShapeError(f"real width {v.shape[-1] if v.ndim else 0} is not divisible by 4")
    d = v.shape[-1] // 4
    return QTensor.from_array(np.moveaxis(v.reshape(v.shape[:-1] + (4, d)), -2, 0))


def quaternion_to_real(q: QTensor) -> np.ndarray:
    """Concatenate components into a real ``(..., 4d)`` array ``[r; x; y; z]``."""
    data = q.data
    return np.moveaxis(data, 0, -2).reshape(data.shape[1:-1] + (4 * data.shape[-1],))


def embed_project(tape: Tape, ids, table: Embedding, proj: QLinear | Linear | None = None,
                  act: str = "identity") -> Node:
    """Look up token rows, optionally transform them, and read the result as quaternions.

    Returns a component-major node ``(4, *ids.shape, d)``.
    """
    x = table(tape, ids)
    if proj is not None:
        x = proj.real(x) if isinstance(proj, QLinear) else proj(x)
    return ad.real_to_quat(activate(x, act))


@eager("real")
def classify(head: OutputHead, q: Node) -> Node:
    """Logits ``W [r; x; y; z] + b`` for a quaternion node ``(4, ..., d)``."""
    if q.shape[-1] != head.d:
        raise ShapeError(f"quaternion width {q.shape[-1]} != head width {head.d}")
    return head.proj(ad.quat_to_real(q))


def softmax_cross_entropy(logits: Node, targets, weights=None) -> Node:
    return ad.cross_entropy(logits, targets, weights)


# -- parameter accounting ------------------------------------------------------------------

@dataclass
class ParamReport:
    """Trainable-scalar counts of a model and of its real reference."""

    total: int
    by_kind: dict[str, int]
    reference_total: int | None = None
    reference_by_kind: dict[str, int] = field(default_factory=dict)
    per_layer: dict[str, int] = field(default_factory=dict)

    @property
    def weights(self) -> int:
        return self.by_kind.get("weight", 0)

    @property
    def reference_weights(self) -> int | None:
        return None if self.reference_total is None else self.reference_by_kind.get("weight", 0)

    @property
    def weight_ratio(self):
        """Exact weight-matrix ratio as a :class:`fractions.Fraction`."""
        if not self.reference_weights:
            return None
        return Fraction(self.weights, self.reference_weights)

    @property
    def total_ratio(self) -> float | None:
        if not self.reference_total:
            return None
        return self.total / self.reference_total


def _counts(module: Module):
    by_kind: dict[str, int] = {}
    per_layer: dict[str, int] = {}
    for name, p in module.named_parameters():
        by_kind[p.kind] = by_kind.get(p.kind, 0) + p.size
        per_layer[name] = p.size
    return sum(per_layer.values()), by_kind, per_layer


def param_count(module: Module, reference: Module | None = None) -> ParamReport:
    """Count trainable scalars by kind and compare with a real reference.

    Without an explicit ``reference`` the module's ``real_equivalent()`` is used
    when it has one.
    """
    total, by_kind, per_layer = _counts(module)
    if reference is None and hasattr(module, "real_equivalent"):
        reference = module.real_equivalent()
    report = ParamReport(total, by_kind, per_layer=per_layer)
    if reference is not None:
        report.reference_total, report.reference_by_kind, _ = _counts(reference)
    return report
