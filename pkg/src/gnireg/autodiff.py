"""Minimal reverse-mode tape over numpy arrays.

Exists for one job: differentiating scalars that already contain first
derivatives of the network (the Jacobian penalty) with respect to the
parameters. The penalty graph is built out of matrix products and
activation-derivative primitives; a single reverse sweep over that graph
then yields the parameter gradient. Each elementwise primitive carries its
own derivative as a plain numpy function, so no higher-order tape is needed.

Only what the penalty and loss graphs require is implemented: broadcasting
add/mul, 2-D matmul, transpose, reductions, and generic elementwise nodes.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """Graph node: a float64 array plus the closure that routes its gradient."""

    __slots__ = ("value", "grad", "parents", "_bwd")

    def __init__(self, value, parents=(), bwd=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._bwd = bwd

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(value) -> Tensor:
    return Tensor(value)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, s in enumerate(shape):
        if s == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))

    return Tensor(a.value + b.value, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return Tensor(a.value * b.value, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        _accumulate(a, c * g)

    return Tensor(c * a.value, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    return Tensor(a.value @ b.value, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, g.T)

    return Tensor(a.value.T, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, np.broadcast_to(g, a.value.shape).copy())

    return Tensor(a.value.sum(), (a,), bwd)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    """Sum along one axis, keeping it as size 1 so broadcasts stay aligned."""

    def bwd(g):
        _accumulate(a, np.broadcast_to(g, a.value.shape).copy())

    return Tensor(a.value.sum(axis=axis, keepdims=True), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.value.size)


def elementwise(a: Tensor, f, df) -> Tensor:
    """Apply f entrywise; df(x) supplies the local derivative in the sweep."""

    def bwd(g):
        _accumulate(a, g * df(a.value))

    return Tensor(f(a.value), (a,), bwd)


def exp(a: Tensor) -> Tensor:
    return elementwise(a, np.exp, np.exp)


def log(a: Tensor) -> Tensor:
    return elementwise(a, np.log, lambda x: 1.0 / x)


def reciprocal(a: Tensor) -> Tensor:
    return elementwise(a, lambda x: 1.0 / x, lambda x: -1.0 / (x * x))


def backward(root: Tensor):
    """Reverse sweep from a scalar root; leaves end with .grad populated."""
    if root.value.size != 1:
        raise ValueError("backward root must be scalar")
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
