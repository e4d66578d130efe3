"""Dataset I/O, preprocessing, splitting and synthetic data."""
from .dataset import (REGIONS, ManifestRow, Sample, load_dataset, load_sample, read_manifest,
                      save_sample, write_manifest)
from .netpbm import ImageFormatError
from .split import SplitSpec, split_dataset, split_sizes
from .synth import STYLES, synth_generate, synth_sample
from .transforms import (AugmentationConfig, NormStats, apply_normalization, augment,
                         compute_norm_stats, resize_image, resize_mask)

__all__ = [
    "REGIONS", "STYLES", "AugmentationConfig", "ImageFormatError", "ManifestRow", "NormStats",
    "Sample", "SplitSpec", "apply_normalization", "augment", "compute_norm_stats", "load_dataset",
    "load_sample", "read_manifest", "resize_image", "resize_mask", "save_sample", "split_dataset",
    "split_sizes", "synth_generate", "synth_sample", "write_manifest",
]
