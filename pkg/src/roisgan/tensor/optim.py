"""Adam optimizer over named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              grads: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, in place.

    Gradients come from ``grads`` when given, else from each tensor's ``.grad``.
    """
    lookup = {}
    for name, p in params.items():
        g = grads[name] if grads is not None and name in grads else p.grad
        if g is None:
            raise ValueError(f"adam_step: parameter '{name}' has no gradient")
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} for '{name}'")
        lookup[name] = g
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = lookup[name].astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.dtype, copy=False)


class Adam:
    """Thin holder binding a parameter dict to an :class:`AdamState`."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
