"""Minimal reverse-mode autodiff over float64 numpy arrays.

Just enough surface for a small transformer: elementwise arithmetic with
broadcasting, matmul, slicing/concat, tanh/exp/log/sqrt, reductions, and a
row-gather for embeddings.  Every op is exact-gradient; the training code's
finite-difference oracle checks the composition end to end.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "parents")

    def __init__(self, data, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        # parents: tuple of (Tensor, vjp) where vjp maps the output gradient
        # to this parent's gradient contribution.
        self.parents = parents

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.data + b.data,
        (
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.data - b.data,
        (
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(-g, b.data.shape)),
        ),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.data * b.data,
        (
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.data / b.data,
        (
            (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.data @ b.data,
        (
            (a, lambda g: g @ b.data.T),
            (b, lambda g: a.data.T @ g),
        ),
    )


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(a.data.T, ((a, lambda g: g.T),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return Tensor(out, ((a, lambda g: g * (1.0 - out * out)),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return Tensor(out, ((a, lambda g: g * out),))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(np.log(a.data), ((a, lambda g: g / a.data),))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor(out, ((a, lambda g: g * 0.5 / out),))


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_exp, a.data.shape).copy()

    return Tensor(out, ((a, vjp),))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        scale = 1.0 / a.data.size
    else:
        scale = 1.0 / a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), scale)


def concat_rows(tensors) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=0)
    parents = []
    offset = 0
    for t in tensors:
        n = t.data.shape[0]
        start = offset

        def vjp(g, start=start, n=n):
            return g[start : start + n]

        parents.append((t, vjp))
        offset += n
    return Tensor(out, tuple(parents))


def concat_cols(tensors) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=1)
    parents = []
    offset = 0
    for t in tensors:
        n = t.data.shape[1]
        start = offset

        def vjp(g, start=start, n=n):
            return g[:, start : start + n]

        parents.append((t, vjp))
        offset += n
    return Tensor(out, tuple(parents))


def slice_rows(a, start, stop) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return full

    return Tensor(a.data[start:stop], ((a, vjp),))


def slice_cols(a, start, stop) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return full

    return Tensor(a.data[:, start:stop], ((a, vjp),))


def gather_rows(a, indices) -> Tensor:
    """Row lookup (embedding): out[i] = a[indices[i]]."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return full

    return Tensor(a.data[idx], ((a, vjp),))


def softmax_rows(a) -> Tensor:
    """Row softmax with a detached max-shift; the gradient stays exact."""
    a = _as_tensor(a)
    shift = a.data.max(axis=-1, keepdims=True)
    e = exp(sub(a, Tensor(shift)))
    return div(e, sum_(e, axis=-1, keepdims=True))


def log_softmax_rows(a) -> Tensor:
    a = _as_tensor(a)
    shift = a.data.max(axis=-1, keepdims=True)
    z = sub(a, Tensor(shift))
    return sub(z, log(sum_(exp(z), axis=-1, keepdims=True)))


def backward(root: Tensor) -> None:
    """Accumulate gradients of ``root`` (a scalar) into every reachable leaf."""
    if root.data.size != 1:
        raise ValueError("backward expects a scalar output")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in node.parents:
            contribution = vjp(node.grad)
            if parent.grad is None:
                parent.grad = contribution
            else:
                parent.grad = parent.grad + contribution
