"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Only the operations the decoder/encoder graphs need are implemented. Graphs
are built eagerly; backward() walks the tape in reverse topological order.
"""

from __future__ import annotations

from typing import Iterable, List, Optional, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data @ other.data, (self, other))

        def back(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)

        out._backward = back
        return out

    # -- reductions and nonlinearities --------------------------------------

    def sum(self):
        out = Tensor(self.data.sum(), (self,))
        out._backward = lambda g: self._accumulate(np.full_like(self.data, g))
        return out

    def mean(self):
        n = self.data.size
        out = Tensor(self.data.mean(), (self,))
        out._backward = lambda g: self._accumulate(np.full_like(self.data, g / n))
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), (self,))
        out._backward = lambda g: self._accumulate(g * (self.data > 0))
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor(y, (self,))
        out._backward = lambda g: self._accumulate(g * (1.0 - y * y))
        return out

    def abs(self):
        out = Tensor(np.abs(self.data), (self,))
        out._backward = lambda g: self._accumulate(g * np.sign(self.data))
        return out

    def square(self):
        out = Tensor(self.data * self.data, (self,))
        out._backward = lambda g: self._accumulate(2.0 * g * self.data)
        return out

    def clamp(self, lo: float, hi: float):
        """Hard clip; gradient passes through strictly inside (lo, hi)."""
        out = Tensor(np.clip(self.data, lo, hi), (self,))
        mask = (self.data > lo) & (self.data < hi)
        out._backward = lambda g: self._accumulate(g * mask)
        return out

    # -- shape manipulation --------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        out._backward = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out

    def expand_rows(self, n: int):
        """(d,) -> (n, d) by repetition; gradient sums over the new axis."""
        out = Tensor(np.broadcast_to(self.data, (n, *self.data.shape)).copy(), (self,))
        out._backward = lambda g: self._accumulate(g.sum(axis=0))
        return out

    def take_rows(self, idx: np.ndarray):
        """Row gather; gradient scatters back with accumulation."""
        idx = np.asarray(idx, dtype=np.intp)
        out = Tensor(self.data[idx], (self,))

        def back(g):
            acc = np.zeros_like(self.data)
            np.add.at(acc, idx, g)
            self._accumulate(acc)

        out._backward = back
        return out

    def max_over_rows(self):
        """(R, d) -> (d,) column-wise max; ties route to the first argmax."""
        arg = np.argmax(self.data, axis=0)
        out = Tensor(self.data[arg, np.arange(self.data.shape[1])], (self,))

        def back(g):
            acc = np.zeros_like(self.data)
            acc[arg, np.arange(self.data.shape[1])] = g
            self._accumulate(acc)

        out._backward = back
        return out

    def mean_over_rows(self):
        """(R, d) -> (d,) column-wise mean in input row order."""
        n = self.data.shape[0]
        out = Tensor(self.data.mean(axis=0), (self,))
        out._backward = lambda g: self._accumulate(
            np.broadcast_to(g / n, self.data.shape).copy()
        )
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    out._backward = back
    return out


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack (d,) tensors into an (R, d) matrix."""
    return concat([t.reshape(1, -1) for t in tensors], axis=0)


def backward(loss: Tensor) -> None:
    """Populate .grad on every tensor reachable from a scalar loss."""
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo: List[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.asarray(1.0)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
