"""Tensor and tape primitives for reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape`.  Outside
of any tape nothing is recorded, which is how inference runs.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_ACTIVE: contextvars.ContextVar[tuple] = contextvars.ContextVar("roisgan_tapes", default=())
_DEBUG = False


class AutodiffError(RuntimeError):
    """Raised for misuse of the tape or non-finite values in debug mode."""


def set_debug(flag: bool) -> None:
    """Toggle finiteness assertions on every forward output and gradient."""
    global _DEBUG
    _DEBUG = bool(flag)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    """Dense array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        """Same storage, cut from the tape."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul_scalar(self, -1.0)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.pow_scalar(self, exponent)


@dataclass
class Node:
    name: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; it may be re-entered to extend the same graph.
    ``backward`` may run once per tape.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(_ACTIVE.get() + (self,))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, name: str, inputs: tuple, output: Tensor, backward_fn) -> None:
        if self._consumed:
            raise AutodiffError("cannot record on a tape that already ran backward")
        output.requires_grad = True
        output._tape = self
        self.nodes.append(Node(name, inputs, output, backward_fn))

    def backward(self, loss: Tensor, retain: Sequence[Tensor] = ()) -> None:
        if self._consumed:
            raise AutodiffError("backward already ran on this tape; build a new tape per step")
        if loss.size != 1:
            raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise AutodiffError(f"loss is not finite: {loss.data.reshape(-1)[0]}")
        self._consumed = True
        keep = {id(t) for t in retain}
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if _DEBUG and not np.isfinite(gi).all():
                    raise AutodiffError(f"non-finite gradient produced by op '{node.name}'")
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=inp.dtype, copy=True).reshape(inp.shape)
                else:
                    inp.grad += gi.reshape(inp.shape)
            # intermediate gradients are dropped once propagated
            if id(node.output) not in keep and node.output is not loss:
                node.output.grad = None


def active_tape() -> Tape | None:
    stack = _ACTIVE.get()
    return stack[-1] if stack else None


class no_record:
    """Suspend recording inside an active tape."""

    def __enter__(self):
        self._token = _ACTIVE.set(())

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def make_output(name: str, inputs: tuple, data: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``data`` and record it when any input needs a gradient."""
    if _DEBUG and not np.isfinite(data).all():
        finite_in = all(np.isfinite(t.data).all() for t in inputs if isinstance(t, Tensor))
        if finite_in:
            raise AutodiffError(f"op '{name}' produced non-finite output from finite inputs")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        tape.record(name, inputs, out, backward_fn)
    return out


def backward(loss: Tensor, retain: Sequence[Tensor] = ()) -> None:
    """Populate ``.grad`` of every tensor that influenced ``loss``."""
    if loss._tape is None:
        if loss.size != 1:
            raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
        raise AutodiffError("loss was not recorded on any tape")
    loss._tape.backward(loss, retain=retain)


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None
