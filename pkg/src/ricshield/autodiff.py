"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and records the operations that produced it;
backward() walks the tape in reverse topological order and accumulates
gradients into every reachable tensor with requires_grad set. All arithmetic
is 64-bit, which keeps finite-difference checks tight.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

_grad_enabled = True
_check_finite = False


@contextmanager
def no_grad():
    """Disable tape recording (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_check_finite(flag: bool) -> None:
    """When on, every op output is scanned for NaN/Inf (slow; for tests)."""
    global _check_finite
    _check_finite = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate .grad on every requires_grad tensor reachable from this scalar.

        The tape is freed afterwards; parameters not on the tape simply keep a
        zero (None) gradient.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
            if node is not self:
                node._parents = ()
                node._backward = None

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_np(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / _np(other))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _np(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def from_op(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Internal node constructor used by every op (including conv/pool in layers)."""
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an operation")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def accumulate(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    """Add g to t's gradient.

    own=True asserts that g is freshly computed by the caller and handed to
    exactly one accumulate call, letting the first accumulation adopt the
    array instead of copying. Pass own=False for anything that may alias a
    live array (e.g. an upstream gradient forwarded unchanged).
    """
    if t.grad is None:
        t.grad = g if own else g.astype(np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            accumulate(a, ga, own=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            accumulate(b, gb, own=gb is not g)

    out = from_op(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.data.shape), own=True)

    out = from_op(out_data, (a, b), backward)
    return out


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out_data = a.data ** exponent

    def backward():
        if a.requires_grad:
            accumulate(a, out.grad * exponent * a.data ** (exponent - 1.0), own=True)

    out = from_op(out_data, (a,), backward)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have rank >= 2")
    out_data = a.data @ b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape), own=True)
        if b.requires_grad:
            accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape), own=True)

    out = from_op(out_data, (a, b), backward)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward():
        if a.requires_grad:
            accumulate(a, out.grad * out_data, own=True)

    out = from_op(out_data, (a,), backward)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward():
        if a.requires_grad:
            accumulate(a, out.grad / a.data, own=True)

    out = from_op(out_data, (a,), backward)
    return out


def maximum(a, floor: float) -> Tensor:
    """Elementwise clamp from below by a constant; gradient is zero where clamped."""
    a = as_tensor(a)
    out_data = np.maximum(a.data, floor)
    mask = a.data > floor

    def backward():
        if a.requires_grad:
            accumulate(a, out.grad * mask, own=True)

    out = from_op(out_data, (a,), backward)
    return out


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    out_data = x * cdf

    def backward():
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
            accumulate(a, out.grad * (cdf + x * pdf), own=True)

    out = from_op(out_data, (a,), backward)
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis (fused forward/backward)."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward():
        if a.requires_grad:
            g = out.grad
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            accumulate(a, out_data * (g - dot), own=True)

    out = from_op(out_data, (a,), backward)
    return out


# -- shape manipulation ----------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward():
        if a.requires_grad:
            accumulate(a, out.grad.reshape(a.data.shape), own=True)

    out = from_op(out_data, (a,), backward)
    return out


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out_data = np.ascontiguousarray(a.data.transpose(axes))
    inverse = np.argsort(axes)

    def backward():
        if a.requires_grad:
            accumulate(a, np.ascontiguousarray(out.grad.transpose(inverse)), own=True)

    out = from_op(out_data, (a,), backward)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                accumulate(t, g[tuple(index)])  # disjoint views; copy on adopt

    out = from_op(out_data, tuple(tensors), backward)
    return out


def expand(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def backward():
        if a.requires_grad:
            g = _unbroadcast(out.grad, a.data.shape)
            accumulate(a, g, own=g is not out.grad)

    out = from_op(out_data, (a,), backward)
    return out


def _has_array_index(idx) -> bool:
    if isinstance(idx, tuple):
        return any(isinstance(i, (np.ndarray, list)) for i in idx)
    return isinstance(idx, (np.ndarray, list))


def take(a, idx) -> Tensor:
    """Indexing/gather (basic slices and advanced integer indexing)."""
    a = as_tensor(a)
    out_data = a.data[idx]
    if not isinstance(out_data, np.ndarray):
        out_data = np.asarray(out_data)
    scatter_add = _has_array_index(idx)  # advanced indices may repeat

    def backward():
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            if scatter_add:
                np.add.at(buf, idx, out.grad)
            else:
                buf[idx] += out.grad
            accumulate(a, buf, own=True)

    out = from_op(out_data.copy(), (a,), backward)
    return out


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        if a.requires_grad:
            g = out.grad
            if not keepdims and axis is not None:
                g = np.expand_dims(g, axis)
            accumulate(a, np.broadcast_to(g, a.data.shape).copy(), own=True)

    out = from_op(np.asarray(out_data), (a,), backward)
    return out


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def backward():
        if a.requires_grad:
            g = out.grad
            if not keepdims and axis is not None:
                g = np.expand_dims(g, axis)
            accumulate(a, np.broadcast_to(g, a.data.shape) / count, own=True)

    out = from_op(np.asarray(out_data), (a,), backward)
    return out
