"""Glue between data, trainer, post-processing and metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.dataset import Sample
from .data.split import SplitSpec, split_dataset
from .data.transforms import NormStats
from .metrics import MetricsReport, evaluate_set
from .models import ModelParams
from .postprocess import binarize, default_min_area, postprocess
from .trainer import normalize_batch, predict


@dataclass
class Splits:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]

    def get(self, name: str) -> list[Sample]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}; choose train, val or test")
        return getattr(self, name)


def split_samples(samples: list[Sample], spec: SplitSpec) -> Splits:
    by_id = {s.id: s for s in samples}
    tr, va, te = split_dataset([s.id for s in samples], spec)
    return Splits([by_id[i] for i in tr], [by_id[i] for i in va], [by_id[i] for i in te])


def predict_samples(gen: ModelParams, samples: list[Sample], norm: NormStats) -> np.ndarray:
    images = np.stack([s.image for s in samples])
    return predict(gen, normalize_batch(images, norm, gen.dtype))


def masks_from_probs(probs: np.ndarray, use_postprocess: bool, tau: float = 0.3,
                     min_area: int | None = None) -> list[np.ndarray]:
    if use_postprocess:
        return [postprocess(p, tau, min_area) for p in probs]
    return [binarize(p, tau) for p in probs]


def evaluate_probs(probs: np.ndarray, samples: list[Sample], use_postprocess: bool,
                   tau: float = 0.3, min_area: int | None = None) -> MetricsReport:
    preds = masks_from_probs(probs, use_postprocess, tau, min_area)
    return evaluate_set({s.id: p for s, p in zip(samples, preds)}, {s.id: s.mask for s in samples})


def inject_speckle(probs: np.ndarray, rng: np.random.Generator, n_components: int = 50,
                   min_size: int = 1, max_size: int = 8, value: float = 1.0,
                   avoid: np.ndarray | None = None) -> np.ndarray:
    """Add ``n_components`` random blobs of ``min_size``..``max_size`` pixels to (1,H,W) maps.

    Each blob grows from a random seed pixel by repeatedly adding a random
    4-neighbour, so it is 4-connected.  Blobs are placed at pixels where both
    the map and ``avoid`` (when given) are below 0.5 and are kept apart from
    each other and from that foreground by a one-pixel margin, so each stays a
    separate 8-connected component of the stated size.
    """
    out = np.array(probs, dtype=np.float64, copy=True)
    for k in range(out.shape[0]):
        plane = out[k, 0]
        h, w = plane.shape
        blocked = plane >= 0.5
        if avoid is not None:
            blocked |= np.asarray(avoid[k]).reshape(h, w) > 0.5
        blocked = _dilate8(blocked)
        placed = 0
        for _ in range(200 * n_components):
            if placed == n_components:
                break
            size = int(rng.integers(min_size, max_size + 1))
            y, x = int(rng.integers(h)), int(rng.integers(w))
            if blocked[y, x]:
                continue
            blob = {(y, x)}
            frontier = [(y, x)]
            for _ in range(50 * size):
                if len(blob) == size:
                    break
                cy, cx = frontier[int(rng.integers(len(frontier)))]
                dy, dx = ((-1, 0), (1, 0), (0, -1), (0, 1))[int(rng.integers(4))]
                ny, nx = cy + dy, cx + dx
                if 0 <= ny < h and 0 <= nx < w and not blocked[ny, nx] and (ny, nx) not in blob:
                    blob.add((ny, nx))
                    frontier.append((ny, nx))
            if len(blob) < size:
                continue
            m = np.zeros((h, w), dtype=bool)
            for p in blob:
                m[p] = True
            plane[m] = value
            blocked |= _dilate8(m)
            placed += 1
        if placed < n_components:
            raise ValueError(f"could not place {n_components} speckle components in map {k}")
    return out


def _dilate8(m: np.ndarray) -> np.ndarray:
    p = np.pad(m, 1)
    h, w = m.shape
    out = np.zeros_like(m)
    for dy in range(3):
        for dx in range(3):
            out |= p[dy:dy + h, dx:dx + w]
    return out


__all__ = ["Splits", "default_min_area", "evaluate_probs", "inject_speckle", "masks_from_probs",
           "predict_samples", "split_samples"]
