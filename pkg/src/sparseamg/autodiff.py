"""Minimal reverse-mode autodiff over numpy arrays.

Tape-based: every op returns a Tensor holding its value, its parents, and a
closure that scatters the output gradient back to them.  backward() runs the
closures in reverse topological order.  Only the primitives the attention
networks and the training loss need are implemented.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "_backward", "_prev")

    def __init__(self, data, _prev=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self._backward = None
        self._prev = _prev

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    # ---- scalar/elementwise ----

    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=np.float64))

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor(self.data + other.data, (self, other))

        def _bw():
            self.grad += _unbroadcast(out.grad, self.data.shape)
            other.grad += _unbroadcast(out.grad, other.data.shape)

        out._backward = _bw
        return out

    def __sub__(self, other):
        other = self._lift(other)
        out = Tensor(self.data - other.data, (self, other))

        def _bw():
            self.grad += _unbroadcast(out.grad, self.data.shape)
            other.grad -= _unbroadcast(out.grad, other.data.shape)

        out._backward = _bw
        return out

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data * other.data, (self, other))

        def _bw():
            self.grad += _unbroadcast(other.data * out.grad, self.data.shape)
            other.grad += _unbroadcast(self.data * out.grad, other.data.shape)

        out._backward = _bw
        return out

    def __rmul__(self, other):
        return self * other

    def __neg__(self):
        return self * -1.0

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division not supported")
        return self * (1.0 / float(scalar))

    def __matmul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data @ other.data, (self, other))

        def _bw():
            self.grad += out.grad @ other.data.T
            other.grad += self.data.T @ out.grad

        out._backward = _bw
        return out

    def t(self):
        out = Tensor(self.data.T, (self,))

        def _bw():
            self.grad += out.grad.T

        out._backward = _bw
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))

        def _bw():
            self.grad += out.grad.reshape(self.data.shape)

        out._backward = _bw
        return out

    def sum(self):
        out = Tensor(self.data.sum(), (self,))

        def _bw():
            self.grad += out.grad

        out._backward = _bw
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))

        def _bw():
            self.grad += out.grad / self.data

        out._backward = _bw
        return out

    def sigmoid(self):
        y = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(y, (self,))

        def _bw():
            self.grad += y * (1.0 - y) * out.grad

        out._backward = _bw
        return out

    def softmax_rows(self):
        """Softmax along the last axis."""
        z = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        out = Tensor(y, (self,))

        def _bw():
            g = out.grad
            self.grad += y * (g - (g * y).sum(axis=-1, keepdims=True))

        out._backward = _bw
        return out

    def detach(self):
        """Value-only copy with no tape history (stop-gradient)."""
        return Tensor(self.data.copy())

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def concat(tensors, axis=1):
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), tuple(tensors))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def _bw():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(lo, hi)
            t.grad += out.grad[tuple(sl)]

    out._backward = _bw
    return out


def basis_action(coeffs: Tensor, basis: np.ndarray) -> Tensor:
    """Linear map y = basis^T c for a fixed (m, N) basis; grad_c = basis @ dy.

    This is how a stencil applies to a fixed padded grid vector: row e of the
    basis holds the action of a unit coefficient at stencil entry e.
    """
    c = coeffs.data.ravel()
    out = Tensor(basis.T @ c, (coeffs,))

    def _bw():
        coeffs.grad += (basis @ out.grad).reshape(coeffs.data.shape)

    out._backward = _bw
    return out
