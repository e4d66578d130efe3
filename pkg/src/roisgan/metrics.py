"""Overlap and boundary-distance metrics for binary masks.

Conventions for degenerate inputs:

* both masks empty: dice = iou = precision = recall = 1, hd = assd = 0
* exactly one empty: the four overlap scores are 0 and hd = assd = the
  image diagonal, sqrt(H^2 + W^2)

Distances are Euclidean between pixel centres; boundaries are foreground
pixels with at least one 4-neighbour in the background (outside the image
counts as background).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.spatial.distance import cdist

FIELDS = ("dice", "iou", "hd", "precision", "recall", "assd")


def _binary(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim == 3 and m.shape[0] == 1:
        m = m[0]
    return m > 0


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ValueError(f"mask shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    return p, g


def confusion(pred, gt) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) pixel counts."""
    p, g = _pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn, p.size - tp - fp - fn


def _ratio(num: int, den: int, p_empty: bool, g_empty: bool) -> float:
    if p_empty and g_empty:
        return 1.0
    if p_empty or g_empty:
        return 0.0
    return num / den


def dice(pred, gt) -> float:
    tp, fp, fn, _ = confusion(pred, gt)
    return _ratio(2 * tp, 2 * tp + fp + fn, tp + fp == 0, tp + fn == 0)


def iou(pred, gt) -> float:
    tp, fp, fn, _ = confusion(pred, gt)
    return _ratio(tp, tp + fp + fn, tp + fp == 0, tp + fn == 0)


def precision(pred, gt) -> float:
    tp, fp, fn, _ = confusion(pred, gt)
    return _ratio(tp, tp + fp, tp + fp == 0, tp + fn == 0)


def recall(pred, gt) -> float:
    tp, fp, fn, _ = confusion(pred, gt)
    return _ratio(tp, tp + fn, tp + fp == 0, tp + fn == 0)


def boundary_mask(mask) -> np.ndarray:
    m = _binary(mask)
    padded = np.pad(m, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return m & ~interior


def extract_boundary(mask) -> np.ndarray:
    """(N,2) row/col coordinates of boundary pixels in raster order."""
    return np.argwhere(boundary_mask(mask))


def _nearest(pred, gt):
    """Boundary-to-boundary minimum distances, or None when one side is empty."""
    p, g = _pair(pred, gt)
    a, b = extract_boundary(p), extract_boundary(g)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return float(np.hypot(*p.shape))
    d = cdist(a.astype(np.float64), b.astype(np.float64))
    return d.min(axis=1), d.min(axis=0)


def hausdorff(pred, gt) -> float:
    """Symmetric Hausdorff distance between boundaries, in pixels."""
    r = _nearest(pred, gt)
    if isinstance(r, float):
        return r
    return float(max(r[0].max(), r[1].max()))


def assd(pred, gt) -> float:
    """Average symmetric surface distance, in pixels."""
    r = _nearest(pred, gt)
    if isinstance(r, float):
        return r
    return float((r[0].sum() + r[1].sum()) / (len(r[0]) + len(r[1])))


def sample_metrics(pred, gt) -> dict[str, float]:
    return {"dice": dice(pred, gt), "iou": iou(pred, gt), "hd": hausdorff(pred, gt),
            "precision": precision(pred, gt), "recall": recall(pred, gt), "assd": assd(pred, gt)}


@dataclass
class MetricsReport:
    ids: list[str]
    rows: list[dict[str, float]]
    mean: dict[str, float] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("id",) + FIELDS)
            for sid, row in zip(self.ids, self.rows):
                w.writerow([sid] + [f"{row[k]:.6f}" for k in FIELDS])
            w.writerow(["MEAN"] + [f"{self.mean[k]:.6f}" for k in FIELDS])


def evaluate_set(pred_masks: Mapping[str, np.ndarray], gt_masks: Mapping[str, np.ndarray]) -> MetricsReport:
    """Per-sample metrics in ``gt_masks`` order plus arithmetic means."""
    if not gt_masks:
        raise ValueError("cannot evaluate an empty set")
    if set(pred_masks) != set(gt_masks):
        missing = sorted(set(gt_masks) - set(pred_masks))
        extra = sorted(set(pred_masks) - set(gt_masks))
        raise ValueError(f"prediction/ground-truth ids differ (missing {missing[:5]}, unexpected {extra[:5]})")
    ids = list(gt_masks)
    rows = [sample_metrics(pred_masks[i], gt_masks[i]) for i in ids]
    mean = {k: float(np.mean([r[k] for r in rows])) for k in FIELDS}
    return MetricsReport(ids, rows, mean)


def read_metrics_csv(path) -> MetricsReport:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        ids, rows, mean = [], [], {}
        for rec in reader:
            vals = {k: float(rec[k]) for k in FIELDS}
            if rec["id"] == "MEAN":
                mean = vals
            else:
                ids.append(rec["id"])
                rows.append(vals)
    return MetricsReport(ids, rows, mean)
