"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray, records the operation that produced it, and
accumulates gradients on a reverse topological sweep.  The operator surface
deliberately mirrors ndarray (+, -, *, @, **, indexing, .mean, .reshape,
.shape) so the same forward code runs on raw arrays when no gradients are
needed; the dispatching helpers at the bottom (tanh, sigmoid, cat, stack,
layer_norm) complete that contract.

Only what the models here need is implemented: matmul restricts its right
operand to 2-d, reductions keep dims, exponents are constants.  Gradients
for broadcast ops are un-broadcast by summation.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    # Keep numpy from absorbing us in mixed expressions; binary ops then
    # fall back to our reflected methods.
    __array_ufunc__ = None

    __slots__ = ("data", "grad", "_backward", "_prev")

    def __init__(self, data, _prev=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self._backward = None
        self._prev = _prev

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data + other.data, (self, other))

            def back():
                self.grad += _unbroadcast(out.grad, self.data.shape)
                other.grad += _unbroadcast(out.grad, other.data.shape)

        else:
            out = Tensor(self.data + other, (self,))

            def back():
                self.grad += _unbroadcast(out.grad, self.data.shape)

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))

        def back():
            self.grad -= out.grad

        out._backward = back
        return out

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data * other.data, (self, other))

            def back():
                self.grad += _unbroadcast(out.grad * other.data, self.data.shape)
                other.grad += _unbroadcast(out.grad * self.data, other.data.shape)

        else:
            const = np.asarray(other)
            out = Tensor(self.data * const, (self,))

            def back():
                self.grad += _unbroadcast(out.grad * const, self.data.shape)

        out._backward = back
        return out

    __rmul__ = __mul__

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        out = Tensor(self.data**exponent, (self,))

        def back():
            self.grad += out.grad * exponent * self.data ** (exponent - 1)

        out._backward = back
        return out

    def __matmul__(self, other):
        other_data = other.data if isinstance(other, Tensor) else np.asarray(other)
        if other_data.ndim != 2:
            raise ValueError("matmul right operand must be 2-d")
        out_prev = (self, other) if isinstance(other, Tensor) else (self,)
        out = Tensor(self.data @ other_data, out_prev)
        a = self

        def back():
            a.grad += out.grad @ other_data.T
            if isinstance(other, Tensor):
                k = a.data.shape[-1]
                n = other_data.shape[1]
                other.grad += a.data.reshape(-1, k).T @ out.grad.reshape(-1, n)

        out._backward = back
        return out

    def __rmatmul__(self, other):
        # constant @ parameter, e.g. pooled input frames times a weight.
        const = np.asarray(other, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("matmul right operand must be 2-d")
        out = Tensor(const @ self.data, (self,))

        def back():
            k = const.shape[-1]
            self.grad += const.reshape(-1, k).T @ out.grad.reshape(-1, self.data.shape[1])

        out._backward = back
        return out

    # -- shaping and selection ----------------------------------------

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], (self,))

        def back():
            np.add.at(self.grad, idx, out.grad)

        out._backward = back
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))

        def back():
            self.grad += out.grad.reshape(self.data.shape)

        out._backward = back
        return out

    def mean(self, axis, keepdims=False):
        if not keepdims:
            raise ValueError("only keepdims=True reductions are supported")
        out = Tensor(self.data.mean(axis=axis, keepdims=True), (self,))
        n = self.data.shape[axis]

        def back():
            self.grad += out.grad / n

        out._backward = back
        return out

    def _tanh(self):
        out = Tensor(np.tanh(self.data), (self,))

        def back():
            self.grad += out.grad * (1.0 - out.data**2)

        out._backward = back
        return out

    def _sigmoid(self):
        out = Tensor(0.5 * (1.0 + np.tanh(0.5 * self.data)), (self,))

        def back():
            self.grad += out.grad * out.data * (1.0 - out.data)

        out._backward = back
        return out


def backward(outputs) -> None:
    """Reverse sweep from already-seeded output gradients.  Callers set
    .grad on each output first; every reachable node then accumulates."""
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(t, False) for t in outputs]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen:
                stack.append((p, False))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# -- backend-generic helpers ------------------------------------------
# Each works on Tensor and ndarray alike so model code is written once.


def tanh(x):
    return x._tanh() if isinstance(x, Tensor) else np.tanh(x)


def sigmoid(x):
    if isinstance(x, Tensor):
        return x._sigmoid()
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def cat(xs, axis=-1):
    if any(isinstance(x, Tensor) for x in xs):
        datas = [x.data if isinstance(x, Tensor) else np.asarray(x) for x in xs]
        out = Tensor(np.concatenate(datas, axis=axis), tuple(x for x in xs if isinstance(x, Tensor)))
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def back():
            for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
                if isinstance(x, Tensor):
                    index = [slice(None)] * out.grad.ndim
                    index[axis] = slice(lo, hi)
                    x.grad += out.grad[tuple(index)]

        out._backward = back
        return out
    return np.concatenate(xs, axis=axis)


def stack(xs, axis=0):
    if any(isinstance(x, Tensor) for x in xs):
        datas = [x.data if isinstance(x, Tensor) else np.asarray(x) for x in xs]
        out = Tensor(np.stack(datas, axis=axis), tuple(x for x in xs if isinstance(x, Tensor)))

        def back():
            grads = np.moveaxis(out.grad, axis, 0)
            for x, g in zip(xs, grads):
                if isinstance(x, Tensor):
                    x.grad += g

        out._backward = back
        return out
    return np.stack(xs, axis=axis)


def layer_norm(x, eps=1e-5):
    """Normalize the last axis to zero mean and unit variance; no learned
    terms here, callers scale and shift as they need."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + eps) ** -0.5
