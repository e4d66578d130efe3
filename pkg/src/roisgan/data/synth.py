"""Deterministic synthetic stand-in for the stained-section datasets.

Each sample holds one curved band-shaped ROI: a parabolic V band (DG-like),
an upper arc (CA1-like) or a hook (CA3-like).  Texture depends on the stain
style:

* ``neun``: dense nuclei (discs of radius 1-2 px, ~60% band coverage) on channel 1
* ``cfos``: sparse puncta (~5% band coverage) on channel 0
* ``multiplexed``: both of the above plus a diffuse band signal on channel 2

Every style adds clutter blobs and sparse nuclei outside the ROI and Gaussian
pixel noise (sigma 0.05).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import ManifestRow, Sample, relpath, save_sample, write_manifest

STYLES = ("cfos", "neun", "multiplexed")
SHAPES = ("dg", "ca1", "ca3")
AREA_RANGE = (0.02, 0.30)
NOISE_SIGMA = 0.05
NEUN_COVERAGE = 0.60
CFOS_COVERAGE = 0.05


def _curve(kind: str, rng: np.random.Generator) -> np.ndarray:
    """Centre line of the band as (N,2) points in unit (y, x) coordinates."""
    t = np.linspace(0.0, 1.0, 240)
    if kind == "dg":
        half = rng.uniform(0.22, 0.32)
        depth = rng.uniform(0.22, 0.34)
        u = (2 * t - 1) * half
        pts = np.stack([depth * (u / half) ** 2 - depth / 2, u], axis=1)
    elif kind == "ca1":
        radius = rng.uniform(0.26, 0.36)
        span = np.deg2rad(rng.uniform(110, 170))
        ang = -np.pi / 2 + (t - 0.5) * span
        pts = np.stack([radius * np.sin(ang) + radius * 0.6, radius * np.cos(ang)], axis=1)
    elif kind == "ca3":
        radius = rng.uniform(0.22, 0.30)
        sweep = np.deg2rad(rng.uniform(200, 250))
        ang = t * sweep
        r = radius * (1.0 - 0.45 * t)
        pts = np.stack([r * np.sin(ang), r * np.cos(ang)], axis=1)
        pts -= pts.mean(axis=0)
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    rot = rng.uniform(-np.pi / 6, np.pi / 6)
    c, s = np.cos(rot), np.sin(rot)
    pts = pts @ np.array([[c, s], [-s, c]])
    centre = rng.uniform(0.42, 0.58, size=2)
    return pts + centre


def _band_mask(points: np.ndarray, half_width: float, size: int) -> np.ndarray:
    centres = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(centres, centres, indexing="ij")
    grid = np.stack([yy.ravel(), xx.ravel()], axis=1)
    d2 = np.full(grid.shape[0], np.inf)
    for chunk in np.array_split(points, 8):
        diff = grid[:, None, :] - chunk[None, :, :]
        d2 = np.minimum(d2, (diff ** 2).sum(axis=2).min(axis=1))
    return (d2 <= half_width ** 2).reshape(size, size)


def render_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Binary band mask whose area fraction lies in AREA_RANGE (redrawn until it does)."""
    for _ in range(100):
        pts = _curve(kind, rng)
        half_width = rng.uniform(0.045, 0.075)
        mask = _band_mask(pts, half_width, size)
        frac = mask.mean()
        if AREA_RANGE[0] <= frac <= AREA_RANGE[1]:
            return mask
    raise RuntimeError(f"could not draw a {kind} mask within the area range at size {size}")


def _stamp_discs(canvas: np.ndarray, allowed: np.ndarray, coverage: float,
                 rng: np.random.Generator, lo: float = 0.6, hi: float = 1.0) -> None:
    """Place radius 1-2 discs centred in ``allowed`` until ``coverage`` of it is lit."""
    ys, xs = np.nonzero(allowed)
    if len(ys) == 0 or coverage <= 0:
        return
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    lit = np.zeros_like(allowed)
    target = coverage * allowed.sum()
    for _ in range(20 * len(ys)):
        if (lit & allowed).sum() >= target:
            break
        k = rng.integers(len(ys))
        r = rng.choice((1.0, 1.5, 2.0))
        disc = (yy - ys[k]) ** 2 + (xx - xs[k]) ** 2 <= r * r
        canvas[disc] = np.maximum(canvas[disc], rng.uniform(lo, hi))
        lit |= disc


def render_image(mask: np.ndarray, style: str, rng: np.random.Generator) -> np.ndarray:
    size = mask.shape[0]
    img = np.zeros((3, size, size))
    outside = ~mask
    if style in ("neun", "multiplexed"):
        _stamp_discs(img[1], mask, NEUN_COVERAGE, rng)
        _stamp_discs(img[1], outside, 0.04, rng, 0.3, 0.7)
    if style in ("cfos", "multiplexed"):
        _stamp_discs(img[0], mask, CFOS_COVERAGE, rng)
        _stamp_discs(img[0], outside, 0.01, rng, 0.3, 0.7)
    if style == "multiplexed":
        img[2] = 0.45 * ndimage.gaussian_filter(mask.astype(np.float64), 1.2)
    # clutter outside the ROI
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(3, 8)):
        ch = rng.integers(3)
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(1.5, 4.0) * size / 64
        blob = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r) & outside
        img[ch][blob] = np.maximum(img[ch][blob], rng.uniform(0.2, 0.5))
    img += rng.normal(0.0, NOISE_SIGMA, img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_sample(index: int, style: str, size: int, seed: int) -> Sample:
    """One sample drawn from its own stream, so any subset is reproducible."""
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; choose from {', '.join(STYLES)}")
    rng = np.random.default_rng([seed, index])
    kind = SHAPES[rng.integers(len(SHAPES))]
    mask = render_mask(kind, size, rng)
    image = render_image(mask, style, rng)
    return Sample(image.astype(np.float32), mask[None].astype(np.float32), "SYNTH",
                  f"synth_{index:04d}_{kind}")


def synth_generate(n: int, style: str, size: int, seed: int, out) -> list[ManifestRow]:
    """Write ``n`` samples as PPM/PGM pairs plus ``manifest.tsv`` under ``out``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; choose from {', '.join(STYLES)}")
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        s = synth_sample(i, style, size, seed)
        img_path = out / "images" / f"{s.id}.ppm"
        mask_path = out / "masks" / f"{s.id}.pgm"
        save_sample(s, img_path, mask_path)
        rows.append(ManifestRow(s.id, relpath(img_path, out), relpath(mask_path, out), s.region))
    write_manifest(out, rows)
    return rows
