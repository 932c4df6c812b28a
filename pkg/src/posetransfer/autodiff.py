"""Reverse-mode automatic differentiation over dense float64 arrays.

The op set covers exactly what the pose-transfer network needs: batched
matrix products, per-point linear maps (1x1 convolutions), softmax, instance
normalization, elementwise math, max pooling over the vertex axis, tiling and
index gathering. No broadcasting beyond what these ops define, no GPU, no
higher-order derivatives.

Tensors are immutable after creation except for gradient accumulation and
in-place parameter updates performed by the optimizer between graph builds.
A graph is confined to the worker that built it.
"""
from __future__ import annotations

import contextlib

import numpy as np

from .errors import DegenerateInputError, ShapeError

_grad_enabled = True
_alloc_log = None


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def track_allocations():
    """Yield a list receiving the element count of every tensor created.

    Used to assert memory contracts (e.g. the attention map never
    materializes an N x N buffer).
    """
    global _alloc_log
    prev = _alloc_log
    _alloc_log = log = []
    try:
        yield log
    finally:
        _alloc_log = prev


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        if _alloc_log is not None:
            _alloc_log.append(self.values.size)

    @property
    def shape(self):
        return self.values.shape

    def detach(self, requires_grad=False):
        """Same values, no graph ancestry. Shares the underlying buffer."""
        out = Tensor.__new__(Tensor)
        out.values = self.values
        out.requires_grad = bool(requires_grad)
        out.grad = None
        out._parents = ()
        out._backward = None
        if _alloc_log is not None:
            _alloc_log.append(0)
        return out

    def item(self):
        return float(self.values)

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self):
        """Reverse pass from a scalar. Gradients accumulate additively."""
        if self.values.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.values))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior grads are scratch space; only leaves keep theirs,
                # so repeated backward calls accumulate cleanly at the leaves
                node.grad = None

    # Operator sugar; scalars are lifted to constants.
    def __add__(self, other):
        return add(self, _lift(other, self.shape))

    def __radd__(self, other):
        return add(_lift(other, self.shape), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.shape))

    def __rsub__(self, other):
        return sub(_lift(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(x, shape):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(shape, float(x)))


def _node(values, parents, backward):
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return _node(a.values + b.values, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def backward(g):
        a._accumulate(g)
        b._accumulate(-g)

    return _node(a.values - b.values, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def backward(g):
        a._accumulate(g * b.values)
        b._accumulate(g * a.values)

    return _node(a.values * b.values, (a, b), backward)


def mul_scalar(x: Tensor, c) -> Tensor:
    c = float(c)

    def backward(g):
        x._accumulate(g * c)

    return _node(x.values * c, (x,), backward)


def scale(x: Tensor, gamma: Tensor) -> Tensor:
    """Multiply by a scalar learnable parameter."""
    if gamma.values.size != 1:
        raise ShapeError(f"scale: gamma must be scalar, got shape {gamma.shape}")

    def backward(g):
        x._accumulate(g * gamma.values)
        gamma._accumulate(np.sum(g * x.values).reshape(gamma.shape))

    return _node(x.values * gamma.values, (x, gamma), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0

    def backward(g):
        x._accumulate(g * mask)

    return _node(np.where(mask, x.values, 0.0), (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)

    def backward(g):
        x._accumulate(g * (1.0 - y * y))

    return _node(y, (x,), backward)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.values)

    def backward(g):
        x._accumulate(g * y)

    return _node(y, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.values)

    def backward(g):
        x._accumulate(g / (2.0 * y))

    return _node(y, (x,), backward)


def reciprocal(x: Tensor) -> Tensor:
    y = 1.0 / x.values

    def backward(g):
        x._accumulate(-g * y * y)

    return _node(y, (x,), backward)


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    """[B,P,Q] x [B,Q,R] -> [B,P,R]."""
    if a.values.ndim != 3 or b.values.ndim != 3:
        raise ShapeError(f"matmul_batched: need 3-d operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"matmul_batched: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        a._accumulate(g @ b.values.swapaxes(-1, -2))
        b._accumulate(a.values.swapaxes(-1, -2) @ g)

    return _node(a.values @ b.values, (a, b), backward)


def transpose_last2(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(g.swapaxes(-1, -2))

    return _node(x.values.swapaxes(-1, -2), (x,), backward)


def pointwise_linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Per-point linear map: out[b,o,n] = sum_i w[o,i] x[b,i,n] + bias[o].

    Equivalent to a kernel-1 stride-1 1D convolution over the vertex axis.
    """
    if x.values.ndim != 3 or w.values.ndim != 2:
        raise ShapeError(f"pointwise_linear: got x {x.shape}, w {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"pointwise_linear: channel mismatch, x has {x.shape[1]} channels, w expects {w.shape[1]}"
        )
    if bias.shape != (w.shape[0],):
        raise ShapeError(f"pointwise_linear: bias shape {bias.shape} != ({w.shape[0]},)")
    # matmul broadcasts (Cout,Cin) over the batch axis and stays on BLAS
    out = w.values @ x.values + bias.values[None, :, None]

    def backward(g):
        x._accumulate(w.values.T @ g)
        if g.shape[0] == 1:
            w._accumulate(g[0] @ x.values[0].T)
        else:
            b, o, n = g.shape
            cin = x.shape[1]
            w._accumulate(g.transpose(1, 0, 2).reshape(o, b * n)
                          @ x.values.transpose(1, 0, 2).reshape(cin, b * n).T)
        bias._accumulate(g.sum(axis=(0, 2)))

    return _node(out, (x, w, bias), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.values.ndim <= axis < x.values.ndim:
        raise ShapeError(f"softmax: axis {axis} out of bounds for shape {x.shape}")
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gy = g * y
        x._accumulate(gy - y * gy.sum(axis=axis, keepdims=True))

    return _node(y, (x,), backward)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (batch, channel) slice over the vertex axis."""
    if x.values.ndim != 3:
        raise ShapeError(f"instance_norm: need [B,C,N], got {x.shape}")
    n = x.shape[-1]
    if n < 2:
        raise DegenerateInputError(f"instance_norm: need at least 2 points per slice, got {n}")
    mean = x.values.mean(axis=-1, keepdims=True)
    var = x.values.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.values - mean) * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        x._accumulate(inv * (g - gm - y * gym))

    return _node(y, (x,), backward)


def max_over_axis(x: Tensor) -> Tensor:
    """Max over the vertex axis, keepdims. Ties route grad to first argmax."""
    if x.values.ndim != 3:
        raise ShapeError(f"max_over_axis: need [B,C,N], got {x.shape}")
    idx = np.argmax(x.values, axis=-1)
    out = np.take_along_axis(x.values, idx[..., None], axis=-1)

    def backward(g):
        buf = np.zeros_like(x.values)
        np.put_along_axis(buf, idx[..., None], g, axis=-1)
        x._accumulate(buf)

    return _node(out, (x,), backward)


def tile(x: Tensor, n: int) -> Tensor:
    """Broadcast [B,C,1] along the vertex axis to [B,C,n]."""
    if n < 1:
        raise ShapeError(f"tile: n must be >= 1, got {n}")
    if x.values.ndim != 3 or x.shape[-1] != 1:
        raise ShapeError(f"tile: need [B,C,1], got {x.shape}")

    def backward(g):
        x._accumulate(g.sum(axis=-1, keepdims=True))

    return _node(np.repeat(x.values, n, axis=-1), (x,), backward)


def gather_last(x: Tensor, idx) -> Tensor:
    """Select vertex columns: [B,C,N] gathered at idx -> [B,C,len(idx)]."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather_last: index must be 1-d, got shape {idx.shape}")

    def backward(g):
        buf = np.zeros_like(x.values)
        np.add.at(buf, (slice(None), slice(None), idx), g)
        x._accumulate(buf)

    return _node(x.values[:, :, idx], (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.full_like(x.values, float(g)))

    return _node(np.sum(x.values), (x,), backward)


def sum_over_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.values.shape).copy())

    return _node(x.values.sum(axis=axis, keepdims=keepdims), (x,), backward)
