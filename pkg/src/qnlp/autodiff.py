"""Reverse-mode differentiation on a tape of real arrays.

Quaternion tensors enter the tape as component-major real arrays of shape
``(4, ...)``; every quaternion operation is one of the real primitives below,
so gradients are ordinary real gradients of the component computation.

Example
-------
>>> tape = Tape()
>>> p = tape.parameter(np.array([1.0, 2.0]))
>>> loss = sum_(mul(p, p))
>>> grads = backward(tape, loss)
>>> grads[p.id]
array([2., 4.])
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, GraphError, ShapeError, VocabError
from .qcore import HAMILTON_TERMS, _BLOCK_SIGN, _BLOCK_SRC, hamilton_block

__all__ = [
    "Node", "Tape", "backward",
    "add", "sub", "mul", "neg", "scale", "matmul", "concat", "split", "take",
    "sum_", "mean", "reshape", "transpose", "tanh", "relu", "identity",
    "softmax", "component_softmax", "cross_entropy", "hamilton_linear",
    "hamilton", "embedding", "layer_norm", "real_to_quat", "quat_to_real", "eager",
]


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: tuple
    value: np.ndarray
    tape: Tape = field(repr=False)
    vjp: Callable | None = field(default=None, repr=False)
    grad: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of computations; parameters are leaves marked trainable."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.parameters: dict[int, object] = {}
        self._bound: dict[int, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def owns(self, node: Node) -> bool:
        return node.tape is self and node.id < len(self.nodes) and self.nodes[node.id] is node

    def record(self, op: str, inputs: Sequence[Node], value, vjp=None) -> Node:
        for inp in inputs:
            if not isinstance(inp, Node) or not self.owns(inp):
                raise GraphError(f"input to {op!r} is not on this tape")
        node = Node(len(self.nodes), op, tuple(i.id for i in inputs),
                    np.asarray(value, dtype=np.float64), self, vjp)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self.record("const", (), value)

    def parameter(self, value, owner=None) -> Node:
        """Record a trainable leaf.

        ``owner`` is any object standing for the parameter (e.g. a
        :class:`qnlp.qlayers.Parameter`); binding the same owner twice on one tape
        returns the same node so shared weights accumulate into one gradient.
        """
        if owner is not None and id(owner) in self._bound:
            return self._bound[id(owner)]
        node = self.record("param", (), value)
        self.parameters[node.id] = owner
        if owner is not None:
            self._bound[id(owner)] = node
        return node

    def non_leaf_count(self) -> int:
        return sum(1 for n in self.nodes if n.inputs)


def backward(tape: Tape, loss: Node) -> dict[int, np.ndarray]:
    """Populate gradients of the scalar ``loss`` and return them per parameter id."""
    if not tape.owns(loss):
        raise GraphError("loss is not on this tape")
    if loss.value.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.value.shape}")
    for node in tape.nodes:
        node.grad = None
    pending: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[: loss.id + 1]):
        g = pending.pop(node.id, None)
        if g is None:
            continue
        node.grad = g
        if node.vjp is None:
            continue
        for inp_id, gi in zip(node.inputs, node.vjp(g)):
            if gi is None:
                continue
            if inp_id in pending:
                pending[inp_id] = pending[inp_id] + gi
            else:
                pending[inp_id] = gi
    out = {}
    for pid in tape.parameters:
        node = tape.nodes[pid]
        out[pid] = node.grad if node.grad is not None else np.zeros_like(node.value)
    return out


def _tape_of(*nodes) -> Tape:
    for n in nodes:
        if isinstance(n, Node):
            return n.tape
    raise GraphError("no tape node among the operands")


def _lift(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record("add", (a, b), a.value + b.value,
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record("sub", (a, b), a.value - b.value,
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    return tape.record("mul", (a, b), av * bv,
                       lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def neg(a: Node) -> Node:
    return a.tape.record("neg", (a,), -a.value, lambda g: (-g,))


def scale(a: Node, alpha: float) -> Node:
    alpha = float(alpha)
    return a.tape.record("scale", (a,), alpha * a.value, lambda g: (alpha * g,))


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    return a.tape.record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def relu(a: Node) -> Node:
    on = a.value > 0
    return a.tape.record("relu", (a,), np.where(on, a.value, 0.0), lambda g: (g * on,))


def identity(a: Node) -> Node:
    return a


# -- structural ----------------------------------------------------------------

def matmul(a, b) -> Node:
    """Batched real matrix product with numpy broadcasting over leading axes."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul shapes do not conform: {av.shape} @ {bv.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return tape.record("matmul", (a, b), av @ bv, vjp)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    tape = _tape_of(*nodes)
    nodes = [_lift(tape, n) for n in nodes]
    value = np.concatenate([n.value for n in nodes], axis=axis)
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]
    return tape.record("concat", nodes, value, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a: Node, index) -> Node:
    """Basic (slice) indexing; gradient scatters back into zeros."""
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return a.tape.record("take", (a,), a.value[index], vjp)


def split(a: Node, sizes: Sequence[int], axis: int = -1) -> list[Node]:
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover extent {a.shape[axis]}")
    axis = axis % a.value.ndim
    out, start = [], 0
    for s in sizes:
        index = (slice(None),) * axis + (slice(start, start + s),)
        out.append(take(a, index))
        start += s
    return out


def sum_(a: Node, axis=None, keepdims: bool = False) -> Node:
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.record("sum", (a,), np.sum(a.value, axis=axis, keepdims=keepdims), vjp)


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / count)


def reshape(a: Node, shape) -> Node:
    old = a.shape
    return a.tape.record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a: Node, axes) -> Node:
    inv = np.argsort(axes)
    return a.tape.record("transpose", (a,), np.transpose(a.value, axes),
                         lambda g: (np.transpose(g, inv),))


def real_to_quat(a: Node) -> Node:
    """``(..., 4d)`` real with contiguous ``[r|x|y|z]`` blocks to ``(4, ..., d)``."""
    width = a.shape[-1]
    if width % 4:
        raise ShapeError(f"real width {width} is not divisible by 4")
    r = reshape(a, a.shape[:-1] + (4, width // 4))
    nd = r.value.ndim
    return transpose(r, (nd - 2,) + tuple(range(nd - 2)) + (nd - 1,))


def quat_to_real(q: Node) -> Node:
    """Inverse of :func:`real_to_quat`."""
    if q.shape[0] != 4:
        raise ShapeError(f"leading axis must be the 4 components, got {q.shape}")
    nd = q.value.ndim
    t = transpose(q, tuple(range(1, nd - 1)) + (0, nd - 1))
    return reshape(t, q.shape[1:-1] + (4 * q.shape[-1],))


# -- attention / output ----------------------------------------------------------

def _softmax_value(x, axis, mask):
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(a: Node, axis: int = -1, mask=None, op: str = "softmax") -> Node:
    """Max-subtracted softmax along ``axis``.

    ``mask`` (broadcastable boolean, True = keep) gives masked entries a weight of
    exactly zero.
    """
    y = _softmax_value(a.value, axis, mask)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return a.tape.record(op, (a,), y, vjp)


def component_softmax(a: Node, axis: int = -1, mask=None) -> Node:
    """Four independent softmaxes, one per quaternion component array."""
    if a.shape[0] != 4:
        raise ShapeError(f"expected component-major (4, ...) array, got {a.shape}")
    if axis % a.value.ndim == 0:
        raise ShapeError("cannot normalize across the component axis")
    return softmax(a, axis, mask, op="component_softmax")


def cross_entropy(logits: Node, targets, weights=None) -> Node:
    """Mean softmax cross-entropy of ``logits (..., C)`` against integer ``targets (...)``.

    ``weights`` (same shape as targets) excludes positions with weight 0 and
    normalizes by the total weight.
    """
    targets = np.asarray(targets)
    x = logits.value
    if x.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {x.shape} do not match targets {targets.shape}")
    w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ContractError("cross entropy needs at least one weighted target")
    m = x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(x - m).sum(axis=-1, keepdims=True)) + m
    picked = np.take_along_axis(x, targets[..., None], axis=-1)
    loss = float(np.sum(w * (lse - picked)[..., 0]) / total)

    def vjp(g):
        p = np.exp(x - lse)
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], -1) - 1.0, -1)
        return (g * p * (w / total)[..., None],)

    return logits.tape.record("cross_entropy", (logits,), np.array(loss), vjp)


# -- quaternion primitives -------------------------------------------------------

def _fold_block_grad(gh: np.ndarray, m: int, k: int) -> np.ndarray:
    """Collect gradients of the 16 structured blocks into the 4 free components."""
    batch = gh.shape[:-2]
    blocks = gh.reshape(batch + (4, m, 4, k))
    gw = np.zeros((4,) + batch + (m, k))
    for c in range(4):
        for b in range(4):
            gw[_BLOCK_SRC[c, b]] += _BLOCK_SIGN[c, b] * blocks[..., c, :, b, :]
    return gw


def hamilton_linear(weight, x) -> Node:
    """``out[..., n, o] = sum_t weight[..., o, t] ⊗ x[..., n, t]``.

    ``weight`` is ``(4, ..., m, k)`` and ``x`` is ``(4, ..., n, k)``; leading batch
    axes broadcast.  Evaluated as one real matmul against the block matrix from
    :func:`qnlp.qcore.hamilton_block`; the weight gradient sums the 16 block
    positions back into the 4 free component matrices.
    """
    tape = _tape_of(weight, x)
    weight, x = _lift(tape, weight), _lift(tape, x)
    wv, xv = weight.value, x.value
    if wv.shape[0] != 4 or xv.shape[0] != 4 or wv.ndim < 3 or xv.ndim < 3:
        raise ShapeError(f"hamilton_linear needs (4, ..., m, k) operands, got {wv.shape} and {xv.shape}")
    m, k = wv.shape[-2:]
    n, k2 = xv.shape[-2:]
    if k != k2:
        raise ShapeError(f"input width {k2} does not match weight width {k}")
    h = hamilton_block(wv)                                   # (..., 4m, 4k)
    xc = np.moveaxis(xv, 0, -2).reshape(xv.shape[1:-1] + (4 * k,))
    out = xc @ np.swapaxes(h, -1, -2)                          # (..., n, 4m)
    value = np.moveaxis(out.reshape(out.shape[:-1] + (4, m)), -2, 0)

    def vjp(g):
        gc = np.moveaxis(g, 0, -2).reshape(g.shape[1:-1] + (4 * m,))
        gxc = gc @ h
        gx = np.moveaxis(gxc.reshape(gxc.shape[:-1] + (4, k)), -2, 0)
        gh = np.swapaxes(gc, -1, -2) @ xc
        gh = _unbroadcast(gh, h.shape)
        return _fold_block_grad(gh, m, k), _unbroadcast(gx, xv.shape)

    return tape.record("hamilton_linear", (weight, x), value, vjp)


def hamilton(a, b) -> Node:
    """Elementwise (broadcasting) Hamilton product of component-major arrays."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    if av.shape[0] != 4 or bv.shape[0] != 4:
        raise ShapeError(f"hamilton needs component-major operands, got {av.shape} and {bv.shape}")
    shape = np.broadcast_shapes(av.shape, bv.shape)
    out = np.zeros(shape)
    for c, i, j, s in HAMILTON_TERMS:
        out[c] += s * av[i] * bv[j]

    def vjp(g):
        ga = np.zeros(shape)
        gb = np.zeros(shape)
        for c, i, j, s in HAMILTON_TERMS:
            ga[i] += s * g[c] * bv[j]
            gb[j] += s * g[c] * av[i]
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return tape.record("hamilton", (a, b), out, vjp)


# -- embedding / normalization ----------------------------------------------------

def embedding(table: Node, ids) -> Node:
    ids = np.asarray(ids, dtype=np.intp)
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise VocabError(f"token id out of range [0, {rows})")

    def vjp(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, ids, g)
        return (gt,)

    return table.tape.record("embedding", (table,), table.value[ids], vjp)


def layer_norm(a: Node, eps: float = 1e-6) -> Node:
    """Normalize the last axis to zero mean and unit variance (no affine part)."""
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return a.tape.record("layer_norm", (a,), y, vjp)


def eager(returns: str = "quat"):
    """Let a tape-level function also accept :class:`~qnlp.qcore.QTensor` operands.

    When no argument is a :class:`Node`, a private tape is created, QTensor
    arguments become constants on it, and the result is converted back to a
    QTensor (``returns="quat"``) or a plain array (``returns="real"``).
    """
    from .qcore import QTensor

    def convert(out):
        if isinstance(out, (tuple, list)):
            return type(out)(convert(o) for o in out)
        if not isinstance(out, Node):
            return out
        return QTensor.from_array(out.value) if returns == "quat" else out.value.copy()

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            if any(isinstance(a, Node) for a in (*args, *kwargs.values())):
                return fn(*args, **kwargs)
            tape = Tape()

            def lift(a):
                return tape.constant(a.data) if isinstance(a, QTensor) else a

            args = [lift(a) for a in args]
            kwargs = {k: lift(v) for k, v in kwargs.items()}
            return convert(fn(*args, **kwargs))

        return wrapper

    return decorate
