"""Thresholding and 8-connected small-component removal."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DEFAULT_TAU = 0.3
REFERENCE_MIN_AREA = 300
REFERENCE_SIZE = 256

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class LabeledComponents:
    """Label image (0 background, 1..K) and the pixel count of each label."""

    labels: np.ndarray
    counts: np.ndarray

    @property
    def n(self) -> int:
        return len(self.counts)


def default_min_area(size: int) -> int:
    """Reference 300-pixel cut scaled by image area (19 at 64x64)."""
    return int(np.floor(REFERENCE_MIN_AREA * size * size / REFERENCE_SIZE ** 2 + 0.5))


def _plane(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim == 3:
        if m.shape[0] != 1:
            raise ValueError(f"expected a single-channel mask, got shape {m.shape}")
        m = m[0]
    if m.ndim != 2:
        raise ValueError(f"expected an (H,W) or (1,H,W) mask, got shape {m.shape}")
    return m


def binarize(probs: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """1 where prob >= tau; shape preserved."""
    return (np.asarray(probs) >= tau).astype(np.uint8)


def connected_components_8(mask: np.ndarray) -> LabeledComponents:
    """8-connected labeling; labels follow raster order of each component's first pixel."""
    m = _plane(mask) > 0
    labels, k = ndimage.label(m, structure=_EIGHT)
    counts = np.bincount(labels.ravel(), minlength=k + 1)[1:]
    return LabeledComponents(labels.astype(np.int32), counts.astype(np.int64))


def filter_min_area(components: LabeledComponents, min_area: int) -> np.ndarray:
    """Binary (H,W) mask keeping only components with at least ``min_area`` pixels."""
    keep = np.zeros(components.n + 1, dtype=bool)
    keep[1:] = components.counts >= min_area
    return keep[components.labels].astype(np.uint8)


def postprocess(probs: np.ndarray, tau: float = DEFAULT_TAU, min_area: int | None = None) -> np.ndarray:
    """Threshold then drop small 8-connected components.

    Accepts (H,W) or (1,H,W) and returns the same shape as uint8.
    """
    probs = np.asarray(probs)
    plane = _plane(probs)
    if min_area is None:
        min_area = default_min_area(plane.shape[0])
    out = filter_min_area(connected_components_8(binarize(plane, tau)), min_area)
    return out.reshape(probs.shape)
