"""Dense f64 tensors with a define-by-run tape for reverse-mode gradients.

A :class:`Tape` records every op applied to tensors that belong to it. Ops on
tensors without a tape (constants) run eagerly and record nothing, so the same
model/loss code serves both evaluation and training.

Example::

    tape = Tape()
    x = tape.variable([3.0])
    y = mul(x, x)
    grads = tape.backward(sum_all(y), [x])   # [array([6.])]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class GradCheckError(ValueError):
    """A finite-difference probe produced a non-finite function value."""


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    # maps upstream gradient -> one gradient per input (None = no contribution)
    backward: Callable[[np.ndarray], tuple] | None


class Tensor:
    """Row-major f64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Tape:
    """Ordered op records; node inputs always point at earlier nodes."""

    nodes: list[_Node] = field(default_factory=list)
    values: list[Tensor] = field(default_factory=list)

    def variable(self, data) -> Tensor:
        """Register a leaf (a parameter or input we want gradients for)."""
        t = Tensor(data, self, len(self.nodes))
        self.nodes.append(_Node("leaf", (), None))
        self.values.append(t)
        return t

    def _record(self, op: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
        ids = tuple(t.node if t.tape is self else -1 for t in inputs)
        t = Tensor(out, self, len(self.nodes))
        self.nodes.append(_Node(op, ids, backward))
        self.values.append(t)
        return t

    def backward(self, root: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``root`` with respect to each tensor in ``wrt``.

        Tensors in ``wrt`` that ``root`` does not depend on get zero gradients.
        """
        if root.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        if root.tape is not self:
            return [np.zeros_like(t.data) for t in wrt]
        grads: list[np.ndarray | None] = [None] * (root.node + 1)
        grads[root.node] = np.ones_like(root.data)
        for i in range(root.node, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            for j, gj in zip(node.inputs, node.backward(g)):
                if j < 0 or gj is None:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        out = []
        for t in wrt:
            g = grads[t.node] if t.tape is self and t.node < len(grads) else None
            out.append(np.zeros_like(t.data) if g is None else g)
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*ts: Tensor) -> Tape | None:
    for t in ts:
        if t.tape is not None:
            return t.tape
    return None


def _emit(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    return tape._record(op, out, inputs, backward)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not agree")


def _unscalar(g: np.ndarray, t: Tensor) -> np.ndarray:
    # undo scalar broadcast
    if t.data.shape == g.shape:
        return g
    return np.asarray(g.sum()).reshape(t.data.shape)


# --- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _emit("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _emit("transpose", a.data.T, (a,), lambda g: (g.T,))


def add_row(a, row) -> Tensor:
    """``a[m×n] + row[n]`` with the row repeated down the batch (bias add)."""
    a, row = as_tensor(a), as_tensor(row)
    if a.data.ndim != 2 or row.shape != (a.shape[1],):
        raise ShapeError(f"add_row: {a.shape} and {row.shape}")
    return _emit("add_row", a.data + row.data, (a, row), lambda g: (g, g.sum(axis=0)))


# --- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unscalar(g, a), _unscalar(g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _emit("mul", A * B, (a, b),
                 lambda g: (_unscalar(g * B, a), _unscalar(g * A, b)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def add_const(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit("add_const", a.data + float(c), (a,), lambda g: (g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0  # subgradient 0 at exactly 0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _emit("log", np.log(A), (a,), lambda g: (g / A,))


def power(a, k: float) -> Tensor:
    """Elementwise ``a**k`` for positive base (or integer-valued ``k``)."""
    a = as_tensor(a)
    A, k = a.data, float(k)
    if k == 0.0:
        return _emit("power", np.ones_like(A), (a,), lambda g: (np.zeros_like(g),))
    return _emit("power", A ** k, (a,), lambda g: (g * k * A ** (k - 1.0),))


def where(mask, a, b) -> Tensor:
    """Pick ``a`` where ``mask`` is true, else ``b``. The mask is a constant."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("where", a, b)
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, a.data, b.data)
    return _emit("where", out, (a, b),
                 lambda g: (_unscalar(np.where(m, g, 0.0), a), _unscalar(np.where(m, 0.0, g), b)))


# --- reductions and indexing ----------------------------------------------

def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _emit("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    shape = a.shape
    return _emit("mean", np.asarray(a.data.mean()), (a,),
                 lambda g: (np.full(shape, float(g) / n),))


def pick(a, index) -> Tensor:
    """Row-wise gather: ``out[i] = a[i, index[i]]``."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError(f"pick: {a.shape} with {idx.shape} indices")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return _emit("pick", a.data[rows, idx], (a,), bw)


def log_softmax(logits) -> Tensor:
    """Row-wise log-softmax via max-shifted log-sum-exp."""
    z = as_tensor(logits)
    Z = z.data
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ShapeError(f"log_softmax needs [m×K] with K >= 2, got {Z.shape}")
    shifted = Z - Z.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)
    return _emit("log_softmax", out, (z,),
                 lambda g: (g - probs * g.sum(axis=1, keepdims=True),))


def softmax(logits) -> np.ndarray:
    """Plain (non-recorded) softmax probabilities."""
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)).data)


# --- gradient checking ----------------------------------------------------

def grad_check(f: Callable[[list[Tensor]], Tensor], params: Sequence, h: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a list of tensors to a scalar tensor. The error for each
    coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    arrays = [np.array(p, dtype=np.float64) for p in params]
    tape = Tape()
    leaves = [tape.variable(a.copy()) for a in arrays]
    analytic = tape.backward(f(leaves), leaves)

    def value(arrs):
        v = float(f([Tensor(a) for a in arrs]).data)
        if not math.isfinite(v):
            raise GradCheckError(f"non-finite function value {v} during finite differences")
        return v

    worst = 0.0
    for k, a in enumerate(arrays):
        flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value(arrays)
            flat[i] = orig - h
            fm = value(arrays)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = analytic[k].reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana)))
    return worst
