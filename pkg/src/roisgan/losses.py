"""Segmentation and adversarial objectives.

All losses are built from tape ops so they are differentiable with respect to
whatever tensors feed them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .models import discriminator_forward
from .tensor import ShapeError, Tensor

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_dice: float = 1.0
    lambda_adv: float = 0.1
    lambda_gp: float = 1.0
    epsilon: float = 1e-8

    def __post_init__(self):
        for name in ("lambda_dice", "lambda_adv", "lambda_gp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class DiscLossVariant:
    """Discriminator objective used for training (and the loss ablation).

    ``kind`` is one of DiceBceEqual, BceOnly, DiceOnly, DiceBceWeighted,
    FocalBce.  ``w_dice``/``w_bce`` only matter for DiceBceWeighted and
    ``alpha``/``gamma`` only for FocalBce.
    """

    kind: str = "DiceBceEqual"
    w_dice: float = 0.5
    w_bce: float = 0.5
    alpha: float = 0.25
    gamma: float = 2.0

    KINDS = ("DiceBceEqual", "BceOnly", "DiceOnly", "DiceBceWeighted", "FocalBce")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown discriminator loss variant {self.kind!r}; choose from {', '.join(self.KINDS)}")
        if self.w_dice < 0 or self.w_bce < 0 or (self.w_dice == 0 and self.w_bce == 0):
            raise ValueError("variant weights must be >= 0 and not all zero")
        if not 0 <= self.alpha <= 1 or self.gamma < 0:
            raise ValueError(f"focal parameters out of range: alpha={self.alpha}, gamma={self.gamma}")

    @property
    def label(self) -> str:
        if self.kind == "DiceBceWeighted":
            return f"DiceBceWeighted({self.w_dice:g},{self.w_bce:g})"
        if self.kind == "FocalBce":
            return f"FocalBce({self.alpha:g},{self.gamma:g})"
        return self.kind


ABLATION_VARIANTS = (
    DiscLossVariant("BceOnly"),
    DiscLossVariant("DiceOnly"),
    DiscLossVariant("DiceBceEqual"),
    DiscLossVariant("DiceBceWeighted", 0.75, 0.25),
    DiscLossVariant("DiceBceWeighted", 0.25, 0.75),
    DiscLossVariant("FocalBce"),
)


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _target(pred: Tensor, target) -> Tensor:
    if isinstance(target, Tensor):
        _check_same(pred, target, "target")
        return target
    return Tensor(np.full(pred.shape, float(target), dtype=pred.dtype))


def dice_loss(y_g: Tensor, y_p: Tensor, eps: float = 1e-8) -> Tensor:
    """1 - 2*sum(y_g*y_p) / (sum(y_g) + sum(y_p) + eps), pooled over the batch."""
    _check_same(y_g, y_p, "dice_loss")
    inter = T.sum(T.mul(y_g, y_p))
    denom = T.add(T.add(T.sum(y_g), T.sum(y_p)), eps)
    return T.sub(1.0, T.div(T.mul_scalar(inter, 2.0), denom))


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; ``target`` may be a tensor or a constant 0/1."""
    t = _target(pred, target)
    p = T.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = T.mul(t, T.log(p))
    neg = T.mul(T.sub(1.0, t), T.log(T.sub(1.0, p)))
    return T.mul_scalar(T.mean(T.add(pos, neg)), -1.0)


def focal_loss(pred: Tensor, target, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Mean of -alpha_t (1 - p_t)^gamma log p_t."""
    t = _target(pred, target)
    p = T.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    # p_t = t*p + (1-t)*(1-p); exact for binary targets
    one_minus_t = T.sub(1.0, t)
    p_t = T.add(T.mul(t, p), T.mul(one_minus_t, T.sub(1.0, p)))
    alpha_t = T.add(T.mul_scalar(t, alpha), T.mul_scalar(one_minus_t, 1.0 - alpha))
    modulator = T.pow_scalar(T.sub(1.0, p_t), gamma) if gamma != 0 else None
    term = T.mul(alpha_t, T.log(p_t))
    if modulator is not None:
        term = T.mul(term, modulator)
    return T.mul_scalar(T.mean(term), -1.0)


def generator_loss(y_g: Tensor, y_p: Tensor, d_on_fake: Tensor | None, w: LossWeights) -> Tensor:
    """lambda_dice * Dice(y_g, y_p) + lambda_adv * BCE(D(y_p), 1).

    ``d_on_fake`` may be None only when lambda_adv is 0; the adversarial term is
    then left out of the graph entirely.
    """
    loss = T.mul_scalar(dice_loss(y_g, y_p, w.epsilon), w.lambda_dice)
    if w.lambda_adv == 0:
        return loss
    if d_on_fake is None:
        raise ValueError("generator_loss needs the discriminator output when lambda_adv > 0")
    _check_same(y_p, d_on_fake, "generator_loss realism map")
    return T.add(loss, T.mul_scalar(bce_loss(d_on_fake, 1.0), w.lambda_adv))


def discriminator_loss(y_g: Tensor, y_p_detached: Tensor, d_on_real: Tensor, d_on_fake: Tensor,
                       variant: DiscLossVariant = DiscLossVariant(), eps: float = 1e-8) -> Tensor:
    """Region-guided discriminator objective (gradient penalty excluded)."""
    _check_same(y_g, y_p_detached, "discriminator_loss masks")
    _check_same(y_g, d_on_real, "discriminator_loss real map")
    _check_same(y_g, d_on_fake, "discriminator_loss fake map")
    kind = variant.kind

    def bce_pair():
        return T.add(bce_loss(d_on_real, 1.0), bce_loss(d_on_fake, 0.0))

    if kind == "BceOnly":
        return T.mul_scalar(bce_pair(), 0.5)
    if kind == "FocalBce":
        focal = T.add(focal_loss(d_on_real, y_g, variant.alpha, variant.gamma),
                      focal_loss(d_on_fake, y_g, variant.alpha, variant.gamma))
        return T.mul_scalar(T.add(focal, bce_pair()), 0.25)
    dice_pair = T.add(dice_loss(y_g, d_on_real, eps), dice_loss(y_g, d_on_fake, eps))
    if kind == "DiceOnly":
        return T.mul_scalar(dice_pair, 0.5)
    if kind == "DiceBceEqual":
        return T.mul_scalar(T.add(dice_pair, bce_pair()), 0.25)
    # DiceBceWeighted: weights apply to the pair means
    return T.add(T.mul_scalar(dice_pair, 0.5 * variant.w_dice), T.mul_scalar(bce_pair(), 0.5 * variant.w_bce))


def unit_directions(shape: tuple, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Gaussian direction fields normalized to unit L2 norm per batch element."""
    v = rng.standard_normal(shape)
    norms = np.sqrt((v.reshape(shape[0], -1) ** 2).sum(axis=1)).reshape((shape[0],) + (1,) * (len(shape) - 1))
    return (v / norms).astype(dtype)


def perturbed_masks(y_g: Tensor, rng: np.random.Generator, eps_fd: float = 1e-3, k_dirs: int = 1) -> np.ndarray:
    """Stacked [y + eps v ...; y - eps v ...] batch for ``k_dirs`` random directions."""
    dirs = [unit_directions(y_g.shape, rng, y_g.dtype) for _ in range(k_dirs)]
    plus = [y_g.data + eps_fd * v for v in dirs]
    minus = [y_g.data - eps_fd * v for v in dirs]
    return np.concatenate(plus + minus)


def gradient_penalty(disc, y_g: Tensor, rng: np.random.Generator,
                     eps_fd: float = 1e-3, k_dirs: int = 1) -> Tensor:
    """Squared input-sensitivity of the discriminator at real masks.

    For each of ``k_dirs`` random unit direction fields v, the directional
    derivative of every output pixel is estimated by central differences,
    (D(y + eps v) - D(y - eps v)) / (2 eps); squares are summed over pixels,
    averaged over the batch and over directions.  ``disc`` is either
    discriminator parameters or any callable mapping a mask batch to a realism
    map.  The perturbed batches go through one forward call, so the result is
    differentiable in the discriminator parameters.
    """
    if not callable(disc):
        params = disc
        disc = lambda m: discriminator_forward(params, m)  # noqa: E731
    out = disc(Tensor(perturbed_masks(y_g, rng, eps_fd, k_dirs)))
    return gradient_penalty_from_maps(out, y_g.shape[0] * k_dirs, eps_fd)


def gradient_penalty_from_maps(out: Tensor, n: int, eps_fd: float) -> Tensor:
    """Penalty from a stacked [plus; minus] discriminator output with ``n`` rows each."""
    hw = int(np.prod(out.shape[1:]))
    flat = T.reshape(out, (2, n, hw))
    diff = T.sub(T.take(flat, 0), T.take(flat, 1))
    deriv = T.mul_scalar(diff, 1.0 / (2.0 * eps_fd))
    per_sample = T.sum(T.square(deriv), axis=1)
    return T.mean(per_sample)

