"""Quaternion scalars and component-major quaternion tensors.

A quaternion ``r + x i + y j + z k`` is stored as four real numbers. Tensors of
quaternions are stored component-major: a single real array of shape
``(4, *shape)`` whose leading axis indexes the ``r, x, y, z`` components, so each
component is itself a contiguous real array of ``shape``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "HAMILTON_TERMS",
    "Quaternion",
    "QTensor",
    "hamilton_block",
    "q_add",
    "q_sub",
    "q_scale",
    "q_conjugate",
    "q_norm",
    "q_unit",
    "q_hamilton",
    "qt_hamilton",
    "qt_hamilton_matmul",
]

# (output component, left component, right component, sign) for every term of
# the Hamilton product, listed in the order the terms are summed.
HAMILTON_TERMS = (
    (0, 0, 0, 1), (0, 1, 1, -1), (0, 2, 2, -1), (0, 3, 3, -1),
    (1, 1, 0, 1), (1, 0, 1, 1), (1, 3, 2, -1), (1, 2, 3, 1),
    (2, 2, 0, 1), (2, 3, 1, 1), (2, 0, 2, 1), (2, 1, 3, -1),
    (3, 3, 0, 1), (3, 2, 1, -1), (3, 1, 2, 1), (3, 0, 3, 1),
)

# _BLOCK_SRC[c][b] is the left component feeding output c from right component b,
# _BLOCK_SIGN[c][b] its sign.  Together they give the 4x4 left-multiplication matrix.
_BLOCK_SRC = np.zeros((4, 4), dtype=np.intp)
_BLOCK_SIGN = np.zeros((4, 4))
for _c, _a, _b, _s in HAMILTON_TERMS:
    _BLOCK_SRC[_c, _b] = _a
    _BLOCK_SIGN[_c, _b] = _s


@dataclass(frozen=True)
class Quaternion:
    """A single quaternion ``r + x i + y j + z k``."""

    r: float
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        for name in ("r", "x", "y", "z"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise DomainError(f"quaternion component {name} is not finite: {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, values) -> Quaternion:
        r, x, y, z = (float(v) for v in values)
        return cls(r, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.x, self.y, self.z])

    def __iter__(self):
        return iter((self.r, self.x, self.y, self.z))

    def __add__(self, other: Quaternion) -> Quaternion:
        return q_add(self, other)

    def __sub__(self, other: Quaternion) -> Quaternion:
        return q_sub(self, other)

    def __neg__(self) -> Quaternion:
        return Quaternion(-self.r, -self.x, -self.y, -self.z)

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return q_hamilton(self, other)
        return q_scale(other, self)

    def __rmul__(self, alpha):
        return q_scale(alpha, self)

    def __abs__(self) -> float:
        return q_norm(self)

    def conjugate(self) -> Quaternion:
        return q_conjugate(self)

    def unit(self) -> Quaternion:
        return q_unit(self)


def q_add(a: Quaternion, b: Quaternion) -> Quaternion:
    return Quaternion(a.r + b.r, a.x + b.x, a.y + b.y, a.z + b.z)


def q_sub(a: Quaternion, b: Quaternion) -> Quaternion:
    return Quaternion(a.r - b.r, a.x - b.x, a.y - b.y, a.z - b.z)


def q_scale(alpha: float, q: Quaternion) -> Quaternion:
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise DomainError(f"scale factor is not finite: {alpha}")
    return Quaternion(alpha * q.r, alpha * q.x, alpha * q.y, alpha * q.z)


def q_conjugate(q: Quaternion) -> Quaternion:
    return Quaternion(q.r, -q.x, -q.y, -q.z)


def q_norm(q: Quaternion) -> float:
    return math.sqrt(q.r * q.r + q.x * q.x + q.y * q.y + q.z * q.z)


def q_unit(q: Quaternion) -> Quaternion:
    """Return ``q / |q|``.

    Raises
    ------
    DomainError
        If ``q`` is the zero quaternion.
    """
    n = q_norm(q)
    if n == 0.0:
        raise DomainError("cannot normalize the zero quaternion")
    return Quaternion(q.r / n, q.x / n, q.y / n, q.z / n)


def q_hamilton(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product ``a ⊗ b``.

    Terms are summed left to right in the same order as the rows of the
    left-multiplication matrix returned by :func:`hamilton_block`, so a
    sequential matrix-vector evaluation reproduces this result bit for bit.
    """
    return Quaternion(
        a.r * b.r - a.x * b.x - a.y * b.y - a.z * b.z,
        a.x * b.r + a.r * b.x - a.z * b.y + a.y * b.z,
        a.y * b.r + a.z * b.x + a.r * b.y - a.x * b.z,
        a.z * b.r - a.y * b.x + a.x * b.y + a.r * b.z,
    )


def hamilton_block(weight: np.ndarray) -> np.ndarray:
    """Real block matrix realizing left multiplication by a quaternion matrix.

    ``weight`` has shape ``(4, ..., m, k)``; the result has shape
    ``(..., 4m, 4k)`` laid out as::

        [[W_r, -W_x, -W_y, -W_z],
         [W_x,  W_r, -W_z,  W_y],
         [W_y,  W_z,  W_r, -W_x],
         [W_z, -W_y,  W_x,  W_r]]

    so that multiplying it with the stacked ``[r; x; y; z]`` blocks of an input
    gives the stacked components of ``W ⊗ input``.
    """
    weight = np.asarray(weight)
    if weight.shape[0] != 4 or weight.ndim < 3:
        raise ShapeError(f"expected weight of shape (4, ..., m, k), got {weight.shape}")
    m, k = weight.shape[-2:]
    batch = weight.shape[1:-2]
    blocks = weight[_BLOCK_SRC] * _BLOCK_SIGN.reshape((4, 4) + (1,) * (weight.ndim - 1))
    # (4, 4, *batch, m, k) -> (*batch, 4, m, 4, k)
    nb = len(batch)
    order = tuple(range(2, 2 + nb)) + (0, 2 + nb, 1, 3 + nb)
    return blocks.transpose(order).reshape(batch + (4 * m, 4 * k))


class QTensor:
    """Immutable n-dimensional quaternion array stored component-major."""

    __slots__ = ("_data",)

    def __init__(self, r, x=None, y=None, z=None):
        comps = [np.asarray(c, dtype=np.float64) for c in (r, x, y, z) if c is not None]
        if len(comps) == 1:
            raise ShapeError("give all four components or use QTensor.from_array")
        if len(comps) != 4:
            raise ShapeError("a quaternion tensor needs exactly four components")
        shape = comps[0].shape
        if any(c.shape != shape for c in comps):
            raise ShapeError(f"component shapes differ: {[c.shape for c in comps]}")
        data = np.stack(comps)
        data.flags.writeable = False
        self._data = data

    @classmethod
    def from_array(cls, data) -> QTensor:
        """Wrap a ``(4, *shape)`` real array (copied)."""
        data = np.array(data, dtype=np.float64)
        if data.ndim == 0 or data.shape[0] != 4:
            raise ShapeError(f"leading axis must have length 4, got shape {data.shape}")
        out = cls.__new__(cls)
        data.flags.writeable = False
        out._data = data
        return out

    @classmethod
    def zeros(cls, shape) -> QTensor:
        return cls.from_array(np.zeros((4,) + tuple(shape)))

    @classmethod
    def identity(cls, n: int) -> QTensor:
        """``n x n`` matrix with ``(1, 0, 0, 0)`` on the diagonal."""
        data = np.zeros((4, n, n))
        data[0] = np.eye(n)
        return cls.from_array(data)

    @classmethod
    def random(cls, rng: np.random.Generator, shape, scale: float = 1.0) -> QTensor:
        return cls.from_array(scale * rng.standard_normal((4,) + tuple(shape)))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple:
        return self._data.shape[1:]

    @property
    def r(self) -> np.ndarray:
        return self._data[0]

    @property
    def x(self) -> np.ndarray:
        return self._data[1]

    @property
    def y(self) -> np.ndarray:
        return self._data[2]

    @property
    def z(self) -> np.ndarray:
        return self._data[3]

    def components(self) -> tuple:
        return tuple(self._data)

    def __getitem__(self, index) -> Quaternion | QTensor:
        if not isinstance(index, tuple):
            index = (index,)
        sub = self._data[(slice(None),) + index]
        if sub.ndim == 1:
            return Quaternion.from_array(sub)
        return QTensor.from_array(sub)

    def __add__(self, other: QTensor) -> QTensor:
        return QTensor.from_array(self._data + _as_data(other))

    def __sub__(self, other: QTensor) -> QTensor:
        return QTensor.from_array(self._data - _as_data(other))

    def __neg__(self) -> QTensor:
        return QTensor.from_array(-self._data)

    def scale(self, alpha: float) -> QTensor:
        return QTensor.from_array(alpha * self._data)

    def conjugate(self) -> QTensor:
        return QTensor.from_array(self._data * np.array([1.0, -1.0, -1.0, -1.0]).reshape((4,) + (1,) * len(self.shape)))

    def apply(self, fn) -> QTensor:
        """Apply a real elementwise function to every component independently."""
        return QTensor(*(fn(c) for c in self._data))

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self._data ** 2, axis=0))

    def transpose(self) -> QTensor:
        """Swap the last two axes (no conjugation)."""
        return QTensor.from_array(np.swapaxes(self._data, -1, -2))

    def allclose(self, other: QTensor, **kwargs) -> bool:
        return self.shape == other.shape and np.allclose(self._data, other.data, **kwargs)

    def __eq__(self, other):
        if not isinstance(other, QTensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other.data))

    __hash__ = None

    def __repr__(self):
        return f"QTensor(shape={self.shape})"


def _as_data(q) -> np.ndarray:
    if isinstance(q, QTensor):
        return q.data
    if isinstance(q, Quaternion):
        return q.as_array()
    return np.asarray(q, dtype=np.float64)


def qt_hamilton(a: QTensor, b: QTensor) -> QTensor:
    """Elementwise (broadcasting) Hamilton product of two quaternion tensors."""
    ar, ax, ay, az = _as_data(a)
    br, bx, by, bz = _as_data(b)
    return QTensor(
        ar * br - ax * bx - ay * by - az * bz,
        ax * br + ar * bx - az * by + ay * bz,
        ay * br + az * bx + ar * by - ax * bz,
        az * br - ay * bx + ax * by + ar * bz,
    )


def qt_hamilton_matmul(a: QTensor, b: QTensor) -> QTensor:
    """Quaternion matrix product ``out[i, j] = sum_t a[i, t] ⊗ b[t, j]``.

    Accumulation runs over the inner index in ascending order, so results are
    reproducible for a given input.
    """
    ad, bd = _as_data(a), _as_data(b)
    if ad.ndim != 3 or bd.ndim != 3:
        raise ShapeError(f"expected quaternion matrices, got shapes {ad.shape[1:]} and {bd.shape[1:]}")
    m, k = ad.shape[1:]
    k2, n = bd.shape[1:]
    if k != k2:
        raise ShapeError(f"inner extents differ: {k} vs {k2}")
    acc = np.zeros((4, m, n))
    for t in range(k):
        acc = acc + qt_hamilton(ad[:, :, t, None], bd[:, None, t, :]).data
    return QTensor.from_array(acc)
