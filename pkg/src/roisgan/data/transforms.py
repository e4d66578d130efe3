"""Resizing, z-score normalization and training-time augmentation."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .dataset import Sample


def _bilinear_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) interpolation weights with half-pixel centers and edge clamping."""
    scale = src / dst
    pos = np.clip((np.arange(dst) + 0.5) * scale - 0.5, 0.0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    m = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def _nearest_index(src: int, dst: int) -> np.ndarray:
    return np.minimum(np.floor((np.arange(dst) + 0.5) * (src / dst)).astype(int), src - 1)


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a (C,H,W) image to (C,size,size)."""
    c, h, w = img.shape
    if (h, w) == (size, size):
        return img.copy()
    ry = _bilinear_matrix(h, size)
    rx = _bilinear_matrix(w, size)
    out = np.einsum("yh,chw,xw->cyx", ry, img.astype(np.float64), rx)
    return out.astype(img.dtype if img.dtype.kind == "f" else np.float64)


def resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resize of a (1,H,W) binary mask."""
    _, h, w = mask.shape
    return mask[:, _nearest_index(h, size)][:, :, _nearest_index(w, size)].copy()


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def compute_norm_stats(images) -> NormStats:
    """Per-channel mean and population std over every pixel of every image."""
    images = list(images)
    if not images:
        raise ValueError("normalization statistics need at least one training image")
    stack = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    mean = stack.mean(axis=(0, 2, 3))
    std = stack.std(axis=(0, 2, 3))
    if np.any(std <= 0):
        bad = [int(c) for c in np.flatnonzero(std <= 0)]
        raise ValueError(f"zero standard deviation in channel(s) {bad}; cannot z-score normalize")
    return NormStats(mean, std)


def apply_normalization(img: np.ndarray, stats: NormStats) -> np.ndarray:
    shape = (-1, 1, 1)
    out = (img - stats.mean.reshape(shape)) / stats.std.reshape(shape)
    return out.astype(img.dtype if img.dtype.kind == "f" else np.float64)


@dataclass(frozen=True)
class AugmentationConfig:
    p_hflip: float = 0.5
    p_rotate: float = 0.3
    max_rotation_deg: float = 10.0
    p_brightness_contrast: float = 0.2
    contrast_min: float = 0.8
    contrast_max: float = 1.2
    brightness_min: float = -0.2
    brightness_max: float = 0.2

    def __post_init__(self):
        for name in ("p_hflip", "p_rotate", "p_brightness_contrast"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability in [0,1], got {v}")
        if self.contrast_min > self.contrast_max or self.brightness_min > self.brightness_max:
            raise ValueError("augmentation ranges must have min <= max")

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(p_hflip=0.0, p_rotate=0.0, p_brightness_contrast=0.0)


def rotate(img: np.ndarray, angle_deg: float, order: int) -> np.ndarray:
    """Rotate each (H,W) plane about the image centre; zero fill outside."""
    c, h, w = img.shape
    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    # inverse mapping: output pixel -> source location
    sy = cos * dy - sin * dx + cy
    sx = sin * dy + cos * dx + cx
    out = np.empty(img.shape, dtype=np.float64)
    for k in range(c):
        out[k] = ndimage.map_coordinates(img[k].astype(np.float64), [sy, sx], order=order,
                                         mode="grid-constant", cval=0.0, prefilter=False)
    return out


def augment(sample: Sample, cfg: AugmentationConfig, rng: np.random.Generator,
            size: int | None = None) -> Sample:
    """Random flip / rotation / brightness-contrast on an unnormalized sample.

    Six uniform draws are consumed per call whatever is applied, so the stream
    position does not depend on which transforms fired.
    """
    u_flip, u_rot, u_angle, u_bc, u_contrast, u_bright = rng.random(6)
    image = sample.image.astype(np.float64)
    mask = sample.mask.astype(np.float64)
    if u_flip < cfg.p_hflip:
        image = image[:, :, ::-1]
        mask = mask[:, :, ::-1]
    if u_rot < cfg.p_rotate:
        angle = -cfg.max_rotation_deg + 2.0 * cfg.max_rotation_deg * u_angle
        image = rotate(image, angle, order=1)
        mask = rotate(mask, angle, order=0)
    if u_bc < cfg.p_brightness_contrast:
        contrast = cfg.contrast_min + (cfg.contrast_max - cfg.contrast_min) * u_contrast
        bright = cfg.brightness_min + (cfg.brightness_max - cfg.brightness_min) * u_bright
        image = np.clip(contrast * image + bright, 0.0, 1.0)
    size = size or image.shape[-1]
    image = resize_image(np.ascontiguousarray(image), size)
    mask = resize_mask(np.ascontiguousarray(mask), size)
    image = np.clip(image, 0.0, 1.0).astype(sample.image.dtype)
    mask = (mask >= 0.5).astype(sample.mask.dtype)
    return replace(sample, image=image, mask=mask)
