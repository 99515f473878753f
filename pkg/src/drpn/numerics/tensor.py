"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Operations record themselves on the active :class:`Tape` only when one is
open and at least one input requires a gradient; outside a tape every op is
a plain numpy evaluation, which is the inference path.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_ufunc__ = None  # make ``ndarray <op> Tensor`` defer to the reflected Tensor method

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("op", "out", "inputs", "backward")

    def __init__(self, op, out, inputs, backward):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward


_local = threading.local()


class Tape:
    """Ordered record of executed ops; use as a context manager.

    Tapes are thread-local, so concurrent inference threads never see a
    training tape.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]

    def backward(self, loss: Tensor) -> list[str]:
        """Accumulate d(loss)/d(input) into ``.grad`` of every recorded input.

        Returns the op names in the order they were visited, which is the
        reverse of execution order.
        """
        if loss.data.size != 1 or loss.ndim > 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        _accumulate(loss, np.ones_like(loss.data))
        visited = []
        for node in reversed(self.nodes):
            g = node.out.grad
            visited.append(node.op)
            if g is None:
                continue
            grads = node.backward(g)
            for t, gi in zip(node.inputs, grads):
                if gi is not None and t.requires_grad:
                    _accumulate(t, gi)
        # release intermediates; leaves keep their accumulated gradients
        for node in self.nodes:
            node.out.grad = None
        self.nodes.clear()
        return visited


def active_tape() -> Tape | None:
    return getattr(_local, "tape", None)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op}: non-finite output")
    tape = active_tape()
    needs = any(t.requires_grad for t in inputs)
    res = Tensor(out, requires_grad=needs and tape is not None)
    if res.requires_grad:
        tape.nodes.append(_Node(op, res, tuple(inputs), backward))
    return res


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _finish(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _finish(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _finish(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


elementwise_mul = mul


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _finish("scalar_mul", a.data * c, (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _finish("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _finish("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _finish("relu", np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _finish("exp", y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x)
    return _finish("log", y, (a,), lambda g: (g / x,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands need at least two dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 2:
                ga = _unbroadcast((g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(*g.shape[:-1], b.shape[0]), a.shape)
            else:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight: one (k, rows) x (rows, n) product instead of a batch sum
                am = np.broadcast_to(a.data, (*g.shape[:-2], *a.shape[-2:])).reshape(-1, a.shape[-1])
                gb = am.T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    if b.ndim == 2 and a.ndim > 2:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(*a.shape[:-1], b.shape[1])
    else:
        out = a.data @ b.data
    return _finish("matmul", out, (a, b), back)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _finish("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _finish("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]}") from None
    ax = axis % out.ndim
    splits = np.cumsum([x.shape[ax] for x in xs])[:-1]
    return _finish("concat", out, xs, lambda g: tuple(np.split(g, splits, axis=ax)))


def concat_cols(xs: Sequence) -> Tensor:
    """Column-wise concatenation ``[a; b]``."""
    return concat(xs, axis=-1)


def concat_rows(xs: Sequence) -> Tensor:
    """Row-wise concatenation ``[A | B]``."""
    return concat(xs, axis=-2)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _finish("sum", np.asarray(out), (a,), back)


def sum_rows(a) -> Tensor:
    """Sum over the row axis (second to last)."""
    return sum(a, axis=-2)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scalar_mul(sum(a, axis=axis), 1.0 / n)


def take(table, idx) -> Tensor:
    """Row lookup ``table[idx]`` for an integer array of any shape."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _finish("take", table.data[idx], (table,), back)


def index(a, key) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _finish("index", np.asarray(a.data[key]), (a,), back)


# ---------------------------------------------------------------- normalizers


def softmax(a, mask=None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; masked-out positions get exactly zero weight.

    ``mask`` is a boolean array broadcastable to ``a`` (True = keep). A row
    whose positions are all masked yields all zeros, which callers use as the
    empty-context convention.
    """
    a = as_tensor(a)
    x = a.data
    if mask is None:
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
        p = e / e.sum(axis=axis, keepdims=True)
    else:
        mask = np.asarray(mask, dtype=bool)
        try:
            mask = np.broadcast_to(mask, x.shape)
        except ValueError:
            raise ShapeError(f"softmax: mask shape {mask.shape} does not match logits {x.shape}") from None
        m = np.where(mask, x, -np.inf).max(axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(mask, np.exp(np.where(mask, x - m, 0.0)), 0.0)
        s = e.sum(axis=axis, keepdims=True)
        p = e / np.where(s > 0, s, 1.0)

    def back(g):
        return (p * (g - (p * g).sum(axis=axis, keepdims=True)),)

    return _finish("softmax", p, (a,), back)


def softmax_rows(a, mask=None) -> Tensor:
    return softmax(a, mask=mask, axis=-1)


LN_EPS = 1e-5


def layer_norm(a, gain=None, bias=None, eps: float = LN_EPS) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    a = as_tensor(a)
    x = a.data
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    inputs = [a]
    out = xhat
    if gain is not None:
        gain = as_tensor(gain)
        inputs.append(gain)
        out = out * gain.data
    if bias is not None:
        bias = as_tensor(bias)
        inputs.append(bias)
        out = out + bias.data

    def back(g):
        dxhat = g * gain.data if gain is not None else g
        dx = inv / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        grads = [dx]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _finish("layer_norm", out, inputs, back)


def logsumexp(a, axis: int = -1) -> Tensor:
    """``log(sum(exp(a)))`` with the max subtracted first.

    The subtracted max is a constant, so the gradient is unaffected.
    """
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = sub(a, m)
    out = add(log(sum(exp(shifted), axis=axis, keepdims=True)), m)
    return reshape(out, np.squeeze(out.data, axis=axis).shape)
