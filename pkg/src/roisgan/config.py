"""Run configuration: one INI file plus flat ``--key value`` overrides.

Grammar (Python ``configparser`` INI): ``[section]`` headers followed by
``key = value`` lines; ``#`` and ``;`` start comments.  Every key belongs to
exactly one section and key names are unique across sections, which lets
command-line overrides use the bare key (``--lambda-adv 0``; dashes and
underscores are interchangeable).  Unknown sections or keys are errors.

Sections and keys::

    [data]         root, image_size, allow_png
    [model]        gen_width, disc_width, in_channels, precision
    [train]        lr_generator, lr_discriminator, max_epochs, patience, batch_size,
                   seed, eval_threshold, eps_fd, k_dirs, beta1, beta2, adam_eps,
                   min_improvement
    [loss]         lambda_dice, lambda_adv, lambda_gp, epsilon, disc_variant,
                   w_dice, w_bce, focal_alpha, focal_gamma
    [augment]      p_hflip, p_rotate, max_rotation_deg, p_brightness_contrast,
                   contrast_min, contrast_max, brightness_min, brightness_max
    [split]        split_train, split_val, split_test, split_seed
    [postprocess]  tau, min_area (integer or ``auto``)
    [output]       out

Relative ``root`` and ``out`` paths in a file resolve against the file's
directory; on the command line they resolve against the working directory.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .data.split import SplitSpec
from .data.transforms import AugmentationConfig
from .losses import DiscLossVariant, LossWeights
from .postprocess import default_min_area
from .tensor import ConfigurationError
from .trainer import TrainConfig


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _min_area(v: str):
    return None if str(v).strip().lower() == "auto" else int(v)


# key -> (section, parser, default)
SCHEMA: dict[str, tuple] = {
    "root": ("data", str, ""),
    "image_size": ("data", int, 64),
    "allow_png": ("data", _bool, False),
    "gen_width": ("model", int, 8),
    "disc_width": ("model", int, 8),
    "in_channels": ("model", int, 3),
    "precision": ("model", str, "float32"),
    "lr_generator": ("train", float, 5e-4),
    "lr_discriminator": ("train", float, 1e-5),
    "max_epochs": ("train", int, 1000),
    "patience": ("train", int, 50),
    "batch_size": ("train", int, 4),
    "seed": ("train", int, 42),
    "eval_threshold": ("train", float, 0.3),
    "eps_fd": ("train", float, 1e-3),
    "k_dirs": ("train", int, 1),
    "beta1": ("train", float, 0.9),
    "beta2": ("train", float, 0.999),
    "adam_eps": ("train", float, 1e-8),
    "min_improvement": ("train", float, 1e-6),
    "lambda_dice": ("loss", float, 1.0),
    "lambda_adv": ("loss", float, 0.1),
    "lambda_gp": ("loss", float, 1.0),
    "epsilon": ("loss", float, 1e-8),
    "disc_variant": ("loss", str, "DiceBceEqual"),
    "w_dice": ("loss", float, 0.5),
    "w_bce": ("loss", float, 0.5),
    "focal_alpha": ("loss", float, 0.25),
    "focal_gamma": ("loss", float, 2.0),
    "p_hflip": ("augment", float, 0.5),
    "p_rotate": ("augment", float, 0.3),
    "max_rotation_deg": ("augment", float, 10.0),
    "p_brightness_contrast": ("augment", float, 0.2),
    "contrast_min": ("augment", float, 0.8),
    "contrast_max": ("augment", float, 1.2),
    "brightness_min": ("augment", float, -0.2),
    "brightness_max": ("augment", float, 0.2),
    "split_train": ("split", float, 0.80),
    "split_val": ("split", float, 0.05),
    "split_test": ("split", float, 0.15),
    "split_seed": ("split", int, 42),
    "tau": ("postprocess", float, 0.3),
    "min_area": ("postprocess", _min_area, None),
    "out": ("output", str, "runs/default"),
}
_PATH_KEYS = ("root", "out")
SECTIONS = tuple(dict.fromkeys(s for s, _, _ in SCHEMA.values()))


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, _, d) in SCHEMA.items()})
    base_dir: Path = field(default_factory=Path.cwd)

    def __getattr__(self, key):
        values = self.__dict__.get("values", {})
        if key in values:
            return values[key]
        raise AttributeError(key)

    def set(self, key: str, raw) -> None:
        key = normalize_key(key)
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        parser = SCHEMA[key][1]
        try:
            self.values[key] = parser(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {exc}") from None

    def path(self, key: str) -> Path:
        p = Path(self.values[key])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def data_root(self) -> Path:
        return self.path("root")

    @property
    def out_dir(self) -> Path:
        return self.path("out")

    def loss_weights(self) -> LossWeights:
        v = self.values
        return LossWeights(v["lambda_dice"], v["lambda_adv"], v["lambda_gp"], v["epsilon"])

    def disc_variant(self) -> DiscLossVariant:
        v = self.values
        return DiscLossVariant(v["disc_variant"], v["w_dice"], v["w_bce"], v["focal_alpha"], v["focal_gamma"])

    def augmentation(self) -> AugmentationConfig:
        v = self.values
        return AugmentationConfig(v["p_hflip"], v["p_rotate"], v["max_rotation_deg"], v["p_brightness_contrast"],
                                  v["contrast_min"], v["contrast_max"], v["brightness_min"], v["brightness_max"])

    def split_spec(self) -> SplitSpec:
        v = self.values
        return SplitSpec(v["split_train"], v["split_val"], v["split_test"], v["split_seed"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            lr_generator=v["lr_generator"], lr_discriminator=v["lr_discriminator"],
            loss_weights=self.loss_weights(), max_epochs=v["max_epochs"], patience=v["patience"],
            batch_size=v["batch_size"], disc_variant=self.disc_variant(), seed=v["seed"],
            eval_threshold=v["eval_threshold"], image_size=v["image_size"], gen_width=v["gen_width"],
            disc_width=v["disc_width"], in_channels=v["in_channels"], eps_fd=v["eps_fd"], k_dirs=v["k_dirs"],
            beta1=v["beta1"], beta2=v["beta2"], adam_eps=v["adam_eps"], min_improvement=v["min_improvement"],
            precision=v["precision"], augment=self.augmentation())

    def resolved_min_area(self) -> int:
        m = self.values["min_area"]
        return default_min_area(self.values["image_size"]) if m is None else m

    def validate(self) -> None:
        """Build every component once so bad values surface before any work."""
        try:
            self.train_config().validate()
            self.split_spec()
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if not 0.0 <= self.values["tau"] <= 1.0:
            raise ConfigurationError(f"tau must lie in [0,1], got {self.values['tau']}")
        if self.values["min_area"] is not None and self.values["min_area"] < 0:
            raise ConfigurationError("min_area must be >= 0")

    def to_ini(self) -> str:
        lines = []
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            for key, (s, _, _) in SCHEMA.items():
                if s == sec:
                    val = self.values[key]
                    if val is None:
                        val = "auto"
                    elif isinstance(val, bool):
                        val = "true" if val else "false"
                    lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)


def normalize_key(key: str) -> str:
    return key.lstrip("-").replace("-", "_").lower()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        cfg.base_dir = path.resolve().parent
        for sec in cp.sections():
            if sec not in SECTIONS:
                raise ConfigurationError(f"{path}: unknown section [{sec}]")
            for key, raw in cp.items(sec):
                k = normalize_key(key)
                if k not in SCHEMA:
                    raise ConfigurationError(f"{path}: unknown key {key!r} in [{sec}]")
                if SCHEMA[k][0] != sec:
                    raise ConfigurationError(f"{path}: key {key!r} belongs in [{SCHEMA[k][0]}], not [{sec}]")
                cfg.set(k, raw)
    for key, raw in (overrides or {}).items():
        # paths given on the command line are relative to the working directory
        if normalize_key(key) in _PATH_KEYS:
            raw = str(Path(raw).absolute())
        cfg.set(key, raw)
    cfg.validate()
    return cfg


def parse_overrides(tokens: list[str]) -> dict[str, str]:
    """``['--lambda-adv', '0', '--seed=3']`` -> ``{'lambda_adv': '0', 'seed': '3'}``."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigurationError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, val = tok.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigurationError(f"override {tok} needs a value")
            key, val = tok, tokens[i + 1]
            i += 2
        key = normalize_key(key)
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        out[key] = val
    return out
