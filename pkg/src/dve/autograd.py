"""A small reverse-mode tape over 2-D float64 arrays.

Every value on the tape is a (rows, cols) array; scalars are 1x1. Leaves are
either trainable (named, receive gradients) or constants (propagation
matrices, noise, dropout masks, indices). Primitives append one node each, so
the tape is topologically ordered by construction and ``backward`` simply
walks it in reverse.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .sparse import SparseMatrix, spmm


class NumericError(ArithmeticError):
    pass


class ShapeError(ValueError):
    pass


class Var:
    __slots__ = ("value", "tape", "index", "trainable", "name")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, trainable: bool = False, name=None):
        self.value = value
        self.tape = tape
        self.index = index
        self.trainable = trainable
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        tag = self.name or f"#{self.index}"
        return f"Var({tag}, shape={self.shape})"


class Tape:
    def __init__(self):
        # (output var, input vars, vjp) per node; leaves carry no inputs
        self.nodes: list[tuple[Var, tuple[Var, ...], Callable | None]] = []

    def _push(self, value, inputs=(), vjp=None, trainable=False, name=None) -> Var:
        var = Var(value, self, len(self.nodes), trainable, name)
        self.nodes.append((var, tuple(inputs), vjp))
        return var

    def leaf(self, value, name: str | None = None, trainable: bool = True) -> Var:
        value = _as2d(value)
        if trainable and name is None:
            raise ValueError("trainable leaves need a name")
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite values in leaf {name!r}")
        return self._push(value, trainable=trainable, name=name)

    def constant(self, value) -> Var:
        return self.leaf(value, trainable=False)

    def record(self, op: str, value: np.ndarray, inputs: Sequence[Var], vjp: Callable) -> Var:
        for x in inputs:
            if x.tape is not self:
                raise ValueError(f"{op}: input from a different tape")
        if not np.all(np.isfinite(value)):
            raise NumericError(f"{op}: non-finite forward value")
        return self._push(value, inputs, vjp)

    def __len__(self) -> int:
        return len(self.nodes)


def _as2d(value) -> np.ndarray:
    a = np.array(value, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected a 2-D value, got shape {a.shape}")
    return a


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of a 1x1 ``loss`` for every trainable leaf, keyed by leaf name.

    Trainable leaves that the loss does not depend on get zero gradients.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got {loss.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.index] = np.ones((1, 1))
    for var, inputs, vjp in reversed(tape.nodes[: loss.index + 1]):
        g = grads[var.index]
        if g is None or vjp is None:
            continue
        for x, gx in zip(inputs, vjp(g)):
            if gx is None:
                continue
            if grads[x.index] is None:
                grads[x.index] = gx
            else:
                grads[x.index] = grads[x.index] + gx
    out = {}
    for var, inputs, _ in tape.nodes:
        if var.trainable:
            g = grads[var.index]
            out[var.name] = np.zeros_like(var.value) if g is None else g
    return out


def _same_shape(op, a: Var, b: Var):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Var, b: Var) -> Var:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm_const(s: SparseMatrix, x: Var) -> Var:
    """Sparse constant times a tape value; the sparse operand gets no gradient."""
    if s.n_cols != x.shape[0]:
        raise ShapeError(f"spmm_const: {s.shape} @ {x.shape}")
    st = s.transposed
    return x.tape.record("spmm_const", spmm(s, x.value), (x,), lambda g: (spmm(st, g),))


def add(a: Var, b: Var) -> Var:
    _same_shape("add", a, b)
    return a.tape.record("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    _same_shape("sub", a, b)
    return a.tape.record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def scalar_mul(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape.record("scalar_mul", c * a.value, (a,), lambda g: (c * g,))


def shift(a: Var, c: float) -> Var:
    """Add a Python constant to every entry."""
    c = float(c)
    return a.tape.record("shift", a.value + c, (a,), lambda g: (g,))


def mul(a: Var, b: Var) -> Var:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return a.tape.record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


elementwise_mul = mul


def exp(a: Var) -> Var:
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return a.tape.record("exp", out, (a,), lambda g: (g * out,))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape.record("relu", np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Var) -> Var:
    out = expit(a.value)
    return a.tape.record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a: Var) -> Var:
    """ln sigmoid(x) = -log(1 + e^-x), evaluated without overflow or cancellation."""
    x = a.value
    out = -np.logaddexp(0.0, -x)
    return a.tape.record("log_sigmoid", out, (a,), lambda g: (g * expit(-x),))


def clip(a: Var, lo: float, hi: float) -> Var:
    inside = (a.value >= lo) & (a.value <= hi)
    return a.tape.record("clip", np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def row_gather(a: Var, indices) -> Var:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("row_gather: indices must be 1-D")
    if len(idx) and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row_gather: index out of range for {a.shape[0]} rows")
    n = a.shape[0]

    def vjp(g):
        # scatter-add as a sparse product: fixed accumulation order per row
        scatter = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))
        return (np.asarray(scatter @ g),)

    return a.tape.record("row_gather", a.value[idx], (a,), vjp)


def concat_cols(parts: Sequence[Var]) -> Var:
    parts = list(parts)
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return parts[0].tape.record("concat_cols", np.concatenate([p.value for p in parts], axis=1), parts, vjp)


def sum(a: Var, axis: int | None = None) -> Var:  # noqa: A001
    shape = a.shape
    if axis is None:
        out = np.array([[a.value.sum()]])
    elif axis in (0, 1):
        out = a.value.sum(axis=axis, keepdims=True)
    else:
        raise ShapeError(f"sum: bad axis {axis}")
    return a.tape.record("sum", out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Var) -> Var:
    shape = a.shape
    n = shape[0] * shape[1]
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    return a.tape.record("mean", np.array([[a.value.mean()]]), (a,),
                         lambda g: (np.full(shape, g[0, 0] / n),))


def square(a: Var) -> Var:
    av = a.value
    return a.tape.record("square", av * av, (a,), lambda g: (2.0 * av * g,))
