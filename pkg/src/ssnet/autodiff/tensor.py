"""Dense tensors with reverse-mode gradient accumulation.

A :class:`Tensor` wraps a numpy array. Operations that receive at least one
tensor with ``requires_grad`` record a node holding a backward closure; the
closure receives the upstream gradient and pushes contributions into the
parents with :func:`accumulate`. Operations on untracked inputs record
nothing, so inference pays no graph cost.
"""

from __future__ import annotations

import os

import numpy as np

from ssnet.errors import NonScalarRoot, NumericError

# Finite-value check after every forward op. Off by default; it costs a full
# pass over every intermediate.
DEBUG = os.environ.get("SSNET_DEBUG", "") not in ("", "0")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "backward_calls")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.backward_calls = 0

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f", op={self.op!r}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        return backward(self)

    # a small arithmetic surface; the layer kernels live in ops.py
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other, self.dtype))

    def sum(self):
        return tensor_sum(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make(data, parents, backward_fn, op):
    """Wrap an op result, recording a graph node only when a parent is tracked."""
    if DEBUG and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, op=op)


def accumulate(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def topological_order(root: Tensor) -> list[Tensor]:
    """Parents before children; iterative so long unrolled graphs do not hit the recursion limit."""
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> int:
    """Populate ``.grad`` on every tracked tensor reachable from ``loss``.

    Returns the number of graph nodes whose backward closure ran.
    """
    if loss.data.size != 1:
        raise NonScalarRoot(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return 0
    loss.grad = np.ones_like(loss.data)
    ran = 0
    for node in reversed(topological_order(loss)):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.backward_calls += 1
        ran += 1
    return ran


# elementary ops


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def _backward(g):
        accumulate(a, g)
        accumulate(b, g)

    return make(a.data + b.data, (a, b), _backward, "add")


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def _backward(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return make(a.data * b.data, (a, b), _backward, "mul")


def tensor_sum(a: Tensor):
    def _backward(g):
        accumulate(a, np.broadcast_to(g, a.shape))

    return make(np.asarray(a.data.sum()), (a,), _backward, "sum")


def reshape(a: Tensor, shape):
    def _backward(g):
        accumulate(a, g.reshape(a.shape))

    return make(a.data.reshape(shape), (a,), _backward, "reshape")


def flatten(a: Tensor):
    """Collapse every axis after the batch axis."""
    return reshape(a, (a.shape[0], -1))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            accumulate(t, g[tuple(index)])

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, _backward, "concat")


def take_columns(a: Tensor, lo: int, hi: int):
    """Slice ``a[:, lo:hi]``."""

    def _backward(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        accumulate(a, full)

    return make(a.data[:, lo:hi], (a,), _backward, "slice")


def transpose(a: Tensor, axes):
    inverse = np.argsort(axes)

    def _backward(g):
        accumulate(a, g.transpose(inverse))

    return make(a.data.transpose(axes), (a,), _backward, "transpose")
