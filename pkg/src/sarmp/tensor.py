"""Small dense-tensor engine with tape-based reverse-mode differentiation.

Only the primitives the message-passing model needs are provided. Values are
numpy float64 arrays; every op that touches a tensor with ``requires_grad``
is appended to the active :class:`Tape`, and :meth:`Tape.backward` replays the
tape in reverse recording order.

Usage::

    w = Tensor(np.zeros(3), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(sigmoid(w))
    tape.backward(loss)
    w.grad  # -> array([0.25, 0.25, 0.25])

A tape can be replayed once; a second ``backward`` raises ``RuntimeError``.
"""
from __future__ import annotations

import os
import threading
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

DTYPE = np.float64
# finite-value checks after every op; on by default under pytest
DEBUG = bool(os.environ.get("SARMP_DEBUG"))

_state = threading.local()


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; the functional forms below are the primary API
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "vjp", "op")

    def __init__(self, op, out, inputs, vjp):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Records ops in execution order; one tape per thread may be active."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._used = False
        self._prev = None

    def __enter__(self):
        self._prev = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        return False

    def record(self, op, out, inputs, vjp):
        if self._used:
            raise RuntimeError("tape already consumed by backward(); record a new one")
        self.nodes.append(_Node(op, out, inputs, vjp))

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf used."""
        if self._used:
            raise RuntimeError("backward() called twice on the same tape")
        if root.data.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
        if not any(n.out is root for n in self.nodes):
            raise RuntimeError("backward: root was not produced on this tape")
        self._used = True
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        produced = {id(n.out) for n in self.nodes}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = t
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g


def current_tape() -> Tape | None:
    return getattr(_state, "tape", None)


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    if DEBUG and not np.isfinite(data).all():
        if all(np.isfinite(t.data).all() for t in inputs):
            raise FloatingPointError(f"{op}: non-finite output from finite inputs")
    needs = any(t.requires_grad for t in inputs)
    tape = current_tape()
    if needs and tape is not None:
        out = Tensor(data, requires_grad=True)
        tape.record(op, out, tuple(inputs), vjp)
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def vjp(g):
        return g @ B.T, A.T @ g

    return _emit("matmul", A @ B, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit("add", a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _emit("sub", a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    A, B = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _emit("mul", A * B, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not xs:
        raise ShapeError("concat: empty input list")
    nd = xs[0].ndim
    ax = axis % nd
    for t in xs[1:]:
        if t.ndim != nd or any(t.shape[i] != xs[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {xs[0].shape} and {t.shape}")
    sizes = [t.shape[ax] for t in xs]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _emit("concat", np.concatenate([t.data for t in xs], axis=ax), tuple(xs), vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % a.ndim
    if not 0 <= start < stop <= a.shape[ax]:
        raise ShapeError(f"slice_axis: range [{start}, {stop}) outside axis of size {a.shape[ax]}")
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _emit("slice_axis", a.data[index], (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),))


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    ax = axis % a.ndim
    shape = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum_axis", a.data.sum(axis=ax, keepdims=keepdims), (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum_all", np.asarray(a.data.sum()), (a,),
                 lambda g: (np.full(shape, float(g), dtype=DTYPE),))


def mean_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    ax = axis % a.ndim
    n = a.shape[ax]
    if n == 0:
        raise ShapeError(f"mean_axis: axis {axis} of {a.shape} is empty")
    return scale(sum_axis(a, ax, keepdims), 1.0 / n)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def standardize(a: Tensor, axis: int = 0, eps: float = 1e-5) -> Tensor:
    """``(a - mean) / sqrt(var + eps)`` along ``axis`` (population variance)."""
    ax = axis % a.ndim
    n = a.shape[ax]
    if n == 0:
        raise ShapeError(f"standardize: axis {axis} of {a.shape} is empty")
    centered = a.data - a.data.mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=ax, keepdims=True) + eps)
    y = centered * inv

    def vjp(g):
        return (inv * (g - g.mean(axis=ax, keepdims=True) - y * (g * y).mean(axis=ax, keepdims=True)),)

    return _emit("standardize", y, (a,), vjp)


def softmax_axis(a: Tensor, axis: int = -1) -> Tensor:
    ax = axis % a.ndim
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _emit("softmax_axis", y, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def log_sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def vjp(g):
        # d/dx log sigma(x) = sigma(-x)
        return (g * np.exp(y - x),)

    return _emit("log_sigmoid", y, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _emit("exp", y, (a,), lambda g: (g * y,))


def neg_sq_dist(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise ``-||a - b||^2`` over the last axis."""
    if a.shape != b.shape:
        raise ShapeError(f"neg_sq_dist: incompatible shapes {a.shape} and {b.shape}")
    d = a.data - b.data

    def vjp(g):
        ga = -2.0 * np.expand_dims(g, -1) * d
        return ga, -ga

    return _emit("neg_sq_dist", -(d * d).sum(axis=-1), (a, b), vjp)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for shape {a.shape}")
    shape = a.shape

    def vjp(g):
        # one-hot scatter matrix: each source row sums its copies in index order
        scatter = sparse.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))),
                                    shape=(shape[0], idx.size))
        flat = g.reshape(idx.size, -1)
        return (np.asarray(scatter @ flat).reshape(shape),)

    return _emit("gather_rows", a.data[idx], (a,), vjp)


def gather_dot(a: Tensor, b: Tensor, cols) -> Tensor:
    """``out[i, j] = <a[i], b[cols[i, j]]>`` without materializing ``b[cols]``."""
    cols = np.asarray(cols, dtype=np.int64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1] or cols.ndim != 2 \
            or cols.shape[0] != a.shape[0]:
        raise ShapeError(f"gather_dot: incompatible shapes {a.shape}, {b.shape} and {cols.shape}")
    if cols.size and (cols.min() < 0 or cols.max() >= b.shape[0]):
        raise ShapeError(f"gather_dot: index out of range for shape {b.shape}")
    A, B = a.data, b.data
    out = np.take_along_axis(A @ B.T, cols, axis=1)

    def vjp(g):
        rows = np.repeat(np.arange(cols.shape[0]), cols.shape[1])
        # duplicate (row, col) pairs are summed when the matrix is built
        grad = sparse.csr_matrix((g.ravel(), (rows, cols.ravel())), shape=(A.shape[0], B.shape[0]))
        return np.asarray(grad @ B), np.asarray(grad.T @ A)

    return _emit("gather_dot", out, (a, b), vjp)


def _mean_matrix(rows, cols, num_rows: int, num_cols: int):
    counts = np.bincount(rows, minlength=num_rows).astype(DTYPE)
    w = 1.0 / counts[rows] if len(rows) else np.zeros(0)
    return sparse.csr_matrix((w, (rows, cols)), shape=(num_rows, num_cols))


def segment_mean(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Mean of the rows of ``a`` grouped by ``segment_ids``; empty segments give zeros."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    if a.ndim != 2 or seg.shape != (a.shape[0],):
        raise ShapeError(f"segment_mean: incompatible shapes {a.shape} and {seg.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ShapeError(f"segment_mean: segment id out of range for {num_segments} segments")
    return gather_mean(a, np.arange(a.shape[0]), seg, num_segments)


def gather_mean(a: Tensor, idx, segment_ids, num_segments: int) -> Tensor:
    """``segment_mean(gather_rows(a, idx), segment_ids, num_segments)`` in one op.

    Implemented as a sparse averaging matrix, so neither direction builds the
    ``(len(idx), dim)`` intermediate; summation order is fixed by the matrix.
    """
    idx = np.asarray(idx, dtype=np.int64)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if a.ndim != 2 or idx.ndim != 1 or seg.shape != idx.shape:
        raise ShapeError(f"gather_mean: incompatible shapes {a.shape}, {idx.shape} and {seg.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_mean: index out of range for shape {a.shape}")
    mat = _mean_matrix(seg, idx, num_segments, a.shape[0])
    out = np.asarray(mat @ a.data)

    def vjp(g):
        return (np.asarray(mat.T @ g),)

    return _emit("gather_mean", out, (a,), vjp)


# ---------------------------------------------------------------- checking

def gradient_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a tensor to a scalar tensor. Relative error per coordinate is
    ``|analytic - numeric| / (|analytic| + |numeric| + 1e-12)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.array(as_tensor(point).data, dtype=DTYPE)
    x = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(x)
    if y.requires_grad:
        tape.backward(y)
    analytic = x.grad if x.grad is not None else np.zeros_like(x0)
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += step
        xm[i] -= step
        fp = float(f(Tensor(xp.reshape(x0.shape))).data)
        fm = float(f(Tensor(xm.reshape(x0.shape))).data)
        flat[i] = (fp - fm) / (2 * step)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0
