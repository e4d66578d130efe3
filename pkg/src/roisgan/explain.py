"""Grad-CAM heatmaps, jet overlays and TP/FP/FN error maps."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import tensor as T
from .data import netpbm
from .data.transforms import resize_image
from .metrics import _pair
from .models import ModelParams, generator_forward
from .tensor import Tensor

JET_POINTS = np.array([0.0, 0.125, 0.375, 0.625, 0.875, 1.0])
JET_COLORS = np.array([
    [0.0, 0.0, 0.5],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
])
CONFIDENT = 0.5


def minmax(x: np.ndarray) -> np.ndarray:
    """Scale to [0,1]; a constant array maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros_like(x)
    out = (x - lo) / (hi - lo)
    # pin the extremes exactly despite rounding
    out[x == lo] = 0.0
    out[x == hi] = 1.0
    return out


def gradcam(gen_params: ModelParams, image: np.ndarray, target_mask: np.ndarray | None = None) -> np.ndarray:
    """Heatmap (S,S) in [0,1] for one normalized (3,S,S) image.

    The target scalar is the summed probability over pixels predicted above
    0.5 (every pixel when none are); ``target_mask`` replaces that selection,
    e.g. with a ground-truth mask.  Channel weights are the spatial means of
    the target's gradient at the last 3x3 decoder block output.
    """
    frozen = gen_params.frozen()
    x = Tensor(np.asarray(image, dtype=gen_params.dtype)[None], requires_grad=True)
    with T.Tape() as tape:
        probs, feats = generator_forward(frozen, x, train=False, return_features=True)
        if target_mask is not None:
            sel = np.asarray(target_mask, dtype=bool).reshape(probs.shape)
        else:
            sel = probs.data > CONFIDENT
        if not sel.any():
            sel = np.ones(probs.shape, dtype=bool)
        score = T.sum(T.mul(probs, Tensor(sel.astype(probs.dtype))))
    tape.backward(score, retain=[feats])
    grad = feats.grad.astype(np.float64)[0]
    act = feats.data.astype(np.float64)[0]
    weights = grad.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, act, axes=1), 0.0)
    size = image.shape[-1]
    if cam.shape != (size, size):
        cam = resize_image(cam[None], size)[0]
    return minmax(cam)


def jet(values: np.ndarray) -> np.ndarray:
    """Piecewise-linear jet colormap; (...,) in [0,1] -> (..., 3)."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.stack([np.interp(v, JET_POINTS, JET_COLORS[:, c]) for c in range(3)], axis=-1)


def overlay(image: np.ndarray, heatmap: np.ndarray, alpha: float = 0.3) -> np.ndarray:
    """(S,S,3) blend of an RGB image in [0,1] with the jet-coloured heatmap.

    ``image`` may be channel-first (3,S,S) or channel-last (S,S,3).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3 and img.shape[-1] != 3:
        img = img.transpose(1, 2, 0)
    return (1.0 - alpha) * img + alpha * jet(heatmap)


def error_map(pred, gt) -> np.ndarray:
    """(H,W,3) colour map: TP green, FP red, FN blue, TN black."""
    p, g = _pair(pred, gt)
    out = np.zeros(p.shape + (3,))
    out[p & ~g, 0] = 1.0
    out[p & g, 1] = 1.0
    out[~p & g, 2] = 1.0
    return out


def write_visuals(out_dir, sample_id: str, image_rgb: np.ndarray, heatmap: np.ndarray,
                  pred: np.ndarray, gt: np.ndarray, alpha: float = 0.3) -> list[Path]:
    """Write the cam / overlay / errmap PPM triplet for one sample."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        f"{sample_id}_cam.ppm": jet(heatmap),
        f"{sample_id}_overlay.ppm": overlay(image_rgb, heatmap, alpha),
        f"{sample_id}_errmap.ppm": error_map(pred, gt),
    }
    paths = []
    for name, rgb in files.items():
        path = out_dir / name
        netpbm.write(path, netpbm.to_uint8(rgb))
        paths.append(path)
    return paths
