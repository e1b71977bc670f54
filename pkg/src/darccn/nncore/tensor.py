"""Array-valued reverse-mode autodiff.

A ``Tensor`` wraps a numpy array. Operations on tensors record a closure that
maps the output gradient to input gradients; ``backward`` walks the recorded
graph in reverse topological order. Recording is skipped entirely when no
input requires a gradient, so inference pays only for the numpy work.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from ..errors import InvalidArgument

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_op(
    data: np.ndarray,
    parents: Iterable[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap ``data`` as the output of an op; records the graph edge if needed."""
    parents = tuple(parents)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    # iterative DFS; recursion would overflow on deep unrolled graphs
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if grad is None:
        if loss.data.size != 1:
            raise InvalidArgument(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): grad}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    return make_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)  # overflow-safe logistic
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def elu(a: Tensor) -> Tensor:
    x = a.data
    neg_part = np.expm1(np.minimum(x, 0.0))
    out = np.where(x >= 0, x, neg_part)
    return make_op(out, (a,), lambda g: (g * np.where(x >= 0, 1.0, neg_part + 1.0),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        return np.split(g, sizes, axis=axis)

    return make_op(np.concatenate(datas, axis=axis), tensors, bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def sum_all(a: Tensor) -> Tensor:
    return make_op(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return make_op(
        np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),)
    )


def square(a: Tensor) -> Tensor:
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))
