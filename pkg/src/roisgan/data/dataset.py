"""Samples, manifest files and image loading."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm
from .netpbm import ImageFormatError

REGIONS = ("DG", "CA1", "CA3", "SYNTH")
MANIFEST = "manifest.tsv"
MANIFEST_HEADER = ("id", "image", "mask", "region")


@dataclass(frozen=True)
class Sample:
    """Image (3,S,S) in [0,1] before normalization and binary mask (1,S,S)."""

    image: np.ndarray
    mask: np.ndarray
    region: str
    id: str

    def __post_init__(self):
        if self.region not in REGIONS:
            raise ValueError(f"unknown region tag {self.region!r}")


def _read_any(path: Path, allow_png: bool) -> np.ndarray:
    if path.suffix.lower() == ".png":
        if not allow_png:
            raise ImageFormatError(f"{path}: PNG input is disabled (set allow_png to enable)")
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}; need 8-bit gray or RGB")
            return np.asarray(im, dtype=np.uint8).copy()
    return netpbm.read(path)


def load_sample(image_path, mask_path, region: str = "SYNTH", sample_id: str | None = None,
                allow_png: bool = False) -> Sample:
    """Read an RGB image and grayscale mask, scale to [0,1], binarize the mask at 0.5."""
    image_path, mask_path = Path(image_path), Path(mask_path)
    img = _read_any(image_path, allow_png)
    msk = _read_any(mask_path, allow_png)
    if img.ndim != 3:
        raise ImageFormatError(f"{image_path}: expected an RGB image (PPM P6 or RGB PNG)")
    if msk.ndim != 2:
        raise ImageFormatError(f"{mask_path}: expected a grayscale mask (PGM P5 or gray PNG)")
    if img.shape[:2] != msk.shape:
        raise ImageFormatError(
            f"size mismatch: image {image_path.name} is {img.shape[1]}x{img.shape[0]}, "
            f"mask {mask_path.name} is {msk.shape[1]}x{msk.shape[0]}")
    image = (img.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()
    mask = ((msk.astype(np.float32) / 255.0) >= 0.5).astype(np.float32)[None]
    return Sample(image, mask, region, sample_id or image_path.stem)


def save_sample(sample: Sample, image_path, mask_path) -> None:
    netpbm.write(image_path, netpbm.to_uint8(sample.image.transpose(1, 2, 0)))
    netpbm.write(mask_path, (sample.mask[0] > 0.5).astype(np.uint8) * 255)


@dataclass(frozen=True)
class ManifestRow:
    id: str
    image: str
    mask: str
    region: str


def read_manifest(root) -> list[ManifestRow]:
    root = Path(root)
    path = root / MANIFEST if root.is_dir() else root
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = tuple(next(reader, ()))
        if header != MANIFEST_HEADER:
            raise ValueError(f"{path}: manifest header must be {MANIFEST_HEADER}, got {header}")
        rows = [ManifestRow(*r) for r in reader if r]
    ids = [r.id for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")
    return rows


def write_manifest(root, rows) -> None:
    with open(Path(root) / MANIFEST, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in rows:
            writer.writerow((r.id, r.image, r.mask, r.region))


def load_dataset(root, image_size: int | None = None, allow_png: bool = False) -> list[Sample]:
    """Load every manifest entry, resized to ``image_size`` when given."""
    from .transforms import resize_image, resize_mask

    root = Path(root)
    base = root if root.is_dir() else root.parent
    samples = []
    for row in read_manifest(root):
        s = load_sample(base / row.image, base / row.mask, row.region, row.id, allow_png)
        if image_size is not None and s.image.shape[1:] != (image_size, image_size):
            s = Sample(resize_image(s.image, image_size).astype(np.float32),
                       resize_mask(s.mask, image_size), s.region, s.id)
        samples.append(s)
    return samples


def relpath(path, start) -> str:
    return os.path.relpath(path, start).replace(os.sep, "/")
