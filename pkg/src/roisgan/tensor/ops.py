"""Elementwise, reduction and shape ops."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .core import Tensor, as_tensor, make_output


class ShapeError(ValueError):
    """Incompatible tensor shapes for an op."""


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    na, nb = a.requires_grad, b.requires_grad

    def back(g):
        return (_unbroadcast(g, a.shape) if na else None,
                _unbroadcast(g, b.shape) if nb else None)

    return make_output("add", (a, b), a.data + b.data, back)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    na, nb = a.requires_grad, b.requires_grad

    def back(g):
        return (_unbroadcast(g, a.shape) if na else None,
                _unbroadcast(-g, b.shape) if nb else None)

    return make_output("sub", (a, b), a.data - b.data, back)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return mul_scalar(a, b)
    a, b = _pair(a, b)
    na, nb = a.requires_grad, b.requires_grad

    def back(g):
        return (_unbroadcast(g * b.data, a.shape) if na else None,
                _unbroadcast(g * a.data, b.shape) if nb else None)

    return make_output("mul", (a, b), a.data * b.data, back)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    na, nb = a.requires_grad, b.requires_grad
    out = a.data / b.data

    def back(g):
        return (_unbroadcast(g / b.data, a.shape) if na else None,
                _unbroadcast(-g * out / b.data, b.shape) if nb else None)

    return make_output("div", (a, b), out, back)


def mul_scalar(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return make_output("mul_scalar", (x,), x.data * s, lambda g: (g * s,))


def pow_scalar(x: Tensor, p: float) -> Tensor:
    p = float(p)

    def back(g):
        return (g * p * x.data ** (p - 1.0),)

    return make_output("pow", (x,), x.data ** p, back)


def square(x: Tensor) -> Tensor:
    return make_output("square", (x,), x.data * x.data, lambda g: (2.0 * g * x.data,))


def log(x: Tensor) -> Tensor:
    return make_output("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return make_output("clip", (x,), np.clip(x.data, lo, hi), lambda g: (g * inside,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_output("relu", (x,), np.maximum(x.data, 0), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return make_output("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_output("sum", (x,), np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    axes = range(x.ndim) if axis is None else np.atleast_1d(axis)
    n = int(np.prod([shape[a] for a in axes]))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape),)

    return make_output("mean", (x,), np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), back)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two B x C x H x W tensors along the channel axis."""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels expects 4-D tensors, got {a.shape} and {b.shape}")
    for dim, label in ((0, "batch"), (2, "height"), (3, "width")):
        if a.shape[dim] != b.shape[dim]:
            raise ShapeError(f"concat_channels {label} mismatch: {a.shape[dim]} vs {b.shape[dim]}")
    ca = a.shape[1]
    return make_output("concat", (a, b), np.concatenate([a.data, b.data], axis=1),
                       lambda g: (g[:, :ca], g[:, ca:]))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_output("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def take(x: Tensor, i: int) -> Tensor:
    """``x[i]`` along the leading axis."""
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[i] = g
        return (full,)

    return make_output("take", (x,), x.data[i], back)


def narrow(x: Tensor, start: int, stop: int) -> Tensor:
    """``x[start:stop]`` along the leading axis."""
    shape = x.shape
    if not 0 <= start <= stop <= shape[0]:
        raise ShapeError(f"narrow: range [{start}, {stop}) outside leading axis of length {shape[0]}")

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return make_output("narrow", (x,), x.data[start:stop], back)
