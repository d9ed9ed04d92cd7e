"""Reverse-mode autodiff on numpy arrays.

A :class:`Tensor` wraps a numpy array together with an optional gradient and a
closure that propagates incoming gradients to its parents.  The op set is
deliberately small: exactly what the voxel encoder/decoder networks and the
grasp graph network need.  Everything runs in float32 by default; passing
float64 arrays switches the whole computation to 64-bit (used by the gradient
checker).
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names both shapes."""


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(DTYPE)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def backward(self):
        """Backpropagate from a scalar tensor through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -np.asarray(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        try:
            data = a.data + b.data
        except ValueError:
            raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None

        def backward(grad):
            if a.requires_grad:
                a._accumulate(_unbroadcast(grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(grad, b.shape))

        return _make(data, (a, b), backward)

    const = np.asarray(b, dtype=a.dtype)

    def backward_const(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.shape))

    return _make(a.data + const, (a,), backward_const)


def scale(a: Tensor, factor) -> Tensor:
    factor = np.asarray(factor, dtype=a.dtype)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * factor, a.shape))

    return _make(a.data * factor, (a,), backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad * a.data, b.shape))

    return _make(data, (a, b), backward)


def reduce_sum(a: Tensor) -> Tensor:
    def backward(grad):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(grad, a.shape).astype(a.dtype))

    return _make(np.asarray(a.data.sum()), (a,), backward)


def reduce_mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(grad):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(grad / n, a.shape).astype(a.dtype))

    return _make(np.asarray(a.data.mean()), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad.reshape(orig))

    return _make(a.data.reshape(shape), (a,), backward)


def concat_rows(tensors) -> Tensor:
    """Concatenate 2-D tensors along axis 0."""
    data = np.concatenate([t.data for t in tensors], axis=0)
    sizes = [t.shape[0] for t in tensors]

    def backward(grad):
        ofs = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                t._accumulate(grad[ofs:ofs + n])
            ofs += n

    return _make(data, tuple(tensors), backward)
