"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the models need are provided. Each op records its
parents and a closure that pushes the output gradient back to them;
:meth:`Tensor.backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        order, seen = [], set()

        def visit(t):
            # iterative DFS; graphs for deep batches exceed the recursion limit
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=float), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    out.backward_fn = bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, (a,))
    out.backward_fn = lambda g: _accum(a, -g)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    out.backward_fn = bw
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, (a, b))

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / b.data**2, b.shape))

    out.backward_fn = bw
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data, (a, b))

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T if b.data.ndim == 2 else np.outer(g, b.data))
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    out.backward_fn = bw
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data**2, (a,))
    out.backward_fn = lambda g: _accum(a, 2.0 * a.data * g)
    return out


def exp(a: Tensor) -> Tensor:
    val = np.exp(a.data)
    out = Tensor(val, (a,))
    out.backward_fn = lambda g: _accum(a, g * val)
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = a.data > 0
    out = Tensor(np.where(pos, a.data, slope * a.data), (a,))
    out.backward_fn = lambda g: _accum(a, np.where(pos, g, slope * g))
    return out


def elu(a: Tensor) -> Tensor:
    pos = a.data > 0
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    out = Tensor(np.where(pos, a.data, neg_part), (a,))
    out.backward_fn = lambda g: _accum(a, np.where(pos, g, g * (neg_part + 1.0)))
    return out


def total(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), (a,))
    out.backward_fn = lambda g: _accum(a, np.broadcast_to(g, a.shape))
    return out


def mean(a: Tensor) -> Tensor:
    size = a.data.size
    out = Tensor(a.data.mean(), (a,))
    out.backward_fn = lambda g: _accum(a, np.broadcast_to(g / size, a.shape))
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))
    out.backward_fn = lambda g: _accum(a, g.reshape(a.shape))
    return out


def concat(parts, axis=0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        for p, gp in zip(parts, np.split(g, bounds, axis=axis)):
            _accum(p, gp)

    out.backward_fn = bw
    return out


def _scatter_matrix(index, n):
    m = len(index)
    return sp.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n, m))


def take(a: Tensor, index) -> Tensor:
    """Rows ``a[index]`` (gather along axis 0)."""
    index = np.asarray(index)
    out = Tensor(a.data[index], (a,))

    def bw(g):
        if a.requires_grad:
            _accum(a, np.asarray(_scatter_matrix(index.ravel(), a.shape[0]) @ g.reshape(index.size, *a.shape[1:])))

    out.backward_fn = bw
    return out


def segment_sum(a: Tensor, segment, n: int) -> Tensor:
    """``out[s] = sum(a[k] for k with segment[k] == s)`` along axis 0."""
    segment = np.asarray(segment)
    S = _scatter_matrix(segment, n)
    out = Tensor(np.asarray(S @ a.data), (a,))
    out.backward_fn = lambda g: _accum(a, g[segment])
    return out


def segment_max(values: np.ndarray, segment, n: int) -> np.ndarray:
    """Plain (non-differentiable) per-segment maximum, ``-inf`` for empty segments."""
    out = np.full((n,) + values.shape[1:], -np.inf)
    np.maximum.at(out, segment, values)
    return out


def segment_softmax(logits: Tensor, segment, n: int) -> Tensor:
    """Softmax of ``logits`` within each segment (the shift is treated as constant)."""
    shift = segment_max(logits.data, segment, n)[segment]
    e = exp(logits - shift)
    denom = segment_sum(e, segment, n)
    return div(e, take(denom, segment))
