"""Central finite-difference gradient oracle.

The oracle only calls the forward function on perturbed copies of plain
numpy data, so it is independent of the tape machinery it checks.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tape, Tensor


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5,
                   indices: Sequence[tuple] | None = None) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place.

    When ``indices`` is given only those entries are estimated; the result
    is then a 1-D array aligned with ``indices``.
    """
    if indices is None:
        grad = np.zeros_like(arr, dtype=np.float64)
        for idx in np.ndindex(arr.shape):
            grad[idx] = _diff(f, arr, idx, h)
        return grad
    return np.array([_diff(f, arr, idx, h) for idx in indices])


def _diff(f, arr, idx, h):
    orig = arr[idx]
    arr[idx] = orig + h
    fp = f()
    arr[idx] = orig - h
    fm = f()
    arr[idx] = orig
    return (fp - fm) / (2.0 * h)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ||a-b|| / max(||a||, ||b||); 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> list[float]:
    """Compare tape gradients of scalar ``fn(*inputs)`` against central differences.

    Returns one relative error per input tensor.  With ``max_entries`` only a
    random subset of each tensor's entries is probed.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        loss = fn(*inputs)
    tape.backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    def scalar():
        return float(fn(*[Tensor(t.data) for t in inputs]).data)

    errors = []
    rng = rng or np.random.default_rng(0)
    for t, ga in zip(inputs, analytic):
        if max_entries is not None and t.size > max_entries:
            flat = rng.choice(t.size, size=max_entries, replace=False)
            idx = [np.unravel_index(i, t.shape) for i in flat]
            gn = numerical_grad(scalar, t.data, h, idx)
            ga = np.array([ga[i] for i in idx])
        else:
            gn = numerical_grad(scalar, t.data, h)
        errors.append(relative_error(ga, gn))
    return errors
