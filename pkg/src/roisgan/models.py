"""U-Net generator and realism-map discriminator.

Both networks are plain functions of a :class:`ModelParams` holder, so the
same parameters can be run with or without recording gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ConfigurationError, Tensor

GEN_LEVELS = 4
DISC_LEVELS = 2


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    base_width: int = 8
    image_size: int = 64

    def validate(self) -> None:
        if self.base_width < 2:
            raise ConfigurationError(f"generator base_width must be >= 2, got {self.base_width}")
        if self.in_channels < 1:
            raise ConfigurationError(f"generator in_channels must be >= 1, got {self.in_channels}")
        if self.image_size % 2 ** GEN_LEVELS:
            raise ConfigurationError(f"generator image_size {self.image_size} is not divisible by {2 ** GEN_LEVELS}")

    def widths(self) -> list[int]:
        """Encoder widths followed by the bottleneck width."""
        return [self.base_width * 2 ** i for i in range(GEN_LEVELS + 1)]


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_width: int = 8
    image_size: int = 64
    in_channels: int = 1

    def validate(self) -> None:
        if self.in_channels != 1:
            raise ConfigurationError(f"discriminator takes single-channel masks, got in_channels={self.in_channels}")
        if self.base_width < 1:
            raise ConfigurationError(f"discriminator base_width must be >= 1, got {self.base_width}")
        if self.image_size % 2 ** DISC_LEVELS:
            raise ConfigurationError(f"discriminator image_size {self.image_size} is not divisible by {2 ** DISC_LEVELS}")

    def widths(self) -> list[int]:
        return [self.base_width * 2 ** i for i in range(DISC_LEVELS + 1)]


class ModelParams:
    """Ordered, named parameter tensors plus batch-norm buffers."""

    def __init__(self):
        self.tensors: dict[str, Tensor] = {}
        self.buffer_names: set[str] = set()

    def add(self, name: str, data: np.ndarray, buffer: bool = False) -> None:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.tensors[name] = Tensor(data, requires_grad=not buffer, name=name)
        if buffer:
            self.buffer_names.add(name)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k not in self.buffer_names}

    def buffers(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k in self.buffer_names}

    def count(self, include_buffers: bool = False) -> int:
        src = self.tensors if include_buffers else self.trainable()
        return int(sum(t.size for t in src.values()))

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype) -> "ModelParams":
        out = ModelParams()
        for k, v in self.tensors.items():
            out.add(k, v.data.astype(dtype), buffer=k in self.buffer_names)
        return out

    def frozen(self) -> "ModelParams":
        """View sharing storage whose tensors never collect gradients."""
        out = ModelParams()
        out.buffer_names = set(self.buffer_names)
        out.tensors = {k: v.detach() for k, v in self.tensors.items()}
        return out

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    def digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for k, v in self.tensors.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v.data).tobytes())
        return h.hexdigest()


def _he(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _conv(p: ModelParams, rng, name: str, cin: int, cout: int, k: int, dtype) -> None:
    p.add(f"{name}.weight", _he(rng, (cout, cin, k, k), cin * k * k, dtype))
    p.add(f"{name}.bias", np.zeros(cout, dtype=dtype))


def _up(p: ModelParams, rng, name: str, cin: int, cout: int, dtype) -> None:
    # each output pixel of a 2x2/stride-2 transpose sees exactly one tap per input channel
    p.add(f"{name}.weight", _he(rng, (cin, cout, 2, 2), cin, dtype))
    p.add(f"{name}.bias", np.zeros(cout, dtype=dtype))


def _bn(p: ModelParams, name: str, c: int, dtype) -> None:
    p.add(f"{name}.gamma", np.ones(c, dtype=dtype))
    p.add(f"{name}.beta", np.zeros(c, dtype=dtype))
    p.add(f"{name}.running_mean", np.zeros(c, dtype=dtype), buffer=True)
    p.add(f"{name}.running_var", np.ones(c, dtype=dtype), buffer=True)


def _block(p: ModelParams, rng, name: str, cin: int, cout: int, dtype, norm: bool) -> None:
    _conv(p, rng, f"{name}.conv1", cin, cout, 3, dtype)
    if norm:
        _bn(p, f"{name}.bn1", cout, dtype)
    _conv(p, rng, f"{name}.conv2", cout, cout, 3, dtype)
    if norm:
        _bn(p, f"{name}.bn2", cout, dtype)


def build_generator(cfg: GeneratorConfig, rng_seed, dtype=np.float32) -> ModelParams:
    """He-initialized parameters for the 4-level U-Net generator."""
    cfg.validate()
    rng = np.random.default_rng(rng_seed)
    w = cfg.widths()
    p = ModelParams()
    cin = cfg.in_channels
    for i in range(GEN_LEVELS):
        _block(p, rng, f"enc{i + 1}", cin, w[i], dtype, norm=True)
        cin = w[i]
    _block(p, rng, "bottleneck", w[-2], w[-1], dtype, norm=True)
    for i in reversed(range(GEN_LEVELS)):
        _up(p, rng, f"up{i + 1}", w[i + 1], w[i], dtype)
        _block(p, rng, f"dec{i + 1}", 2 * w[i], w[i], dtype, norm=True)
    _conv(p, rng, "head", w[0], 1, 1, dtype)
    return p


def build_discriminator(cfg: DiscriminatorConfig, rng_seed, dtype=np.float32) -> ModelParams:
    """He-initialized parameters for the 2-level realism-map network (no batch norm)."""
    cfg.validate()
    rng = np.random.default_rng(rng_seed)
    w = cfg.widths()
    p = ModelParams()
    cin = cfg.in_channels
    for i in range(DISC_LEVELS):
        _block(p, rng, f"enc{i + 1}", cin, w[i], dtype, norm=False)
        cin = w[i]
    _block(p, rng, "bottleneck", w[-2], w[-1], dtype, norm=False)
    for i in reversed(range(DISC_LEVELS)):
        _up(p, rng, f"up{i + 1}", w[i + 1], w[i], dtype)
        _block(p, rng, f"dec{i + 1}", 2 * w[i], w[i], dtype, norm=False)
    _conv(p, rng, "head", w[0], 1, 1, dtype)
    return p


def _conv_layer(p: ModelParams, name: str, x: Tensor, padding: int = 1) -> Tensor:
    return T.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], stride=1, padding=padding)


def _run_block(p: ModelParams, name: str, x: Tensor, train: bool, norm: bool) -> Tensor:
    for j in (1, 2):
        x = _conv_layer(p, f"{name}.conv{j}", x)
        if norm:
            bn = f"{name}.bn{j}"
            x = T.batchnorm2d(x, p[f"{bn}.gamma"], p[f"{bn}.beta"], p[f"{bn}.running_mean"],
                              p[f"{bn}.running_var"], train=train)
        x = T.relu(x)
    return x


def _unet(p: ModelParams, x: Tensor, levels: int, train: bool, norm: bool, skip_scale=None):
    skips = []
    for i in range(levels):
        x = _run_block(p, f"enc{i + 1}", x, train, norm)
        skips.append(x)
        x = T.maxpool2x2(x)
    x = _run_block(p, "bottleneck", x, train, norm)
    for i in reversed(range(levels)):
        x = T.conv_transpose2d(x, p[f"up{i + 1}.weight"], p[f"up{i + 1}.bias"], stride=2)
        skip = skips[i]
        if skip_scale is not None and i in skip_scale:
            skip = T.mul_scalar(skip, skip_scale[i])
        x = T.concat_channels(x, skip)
        x = _run_block(p, f"dec{i + 1}", x, train, norm)
    features = x
    logits = _conv_layer(p, "head", x, padding=0)
    return T.sigmoid(logits), features


def generator_forward(params: ModelParams, image: Tensor, train: bool = False,
                      return_features: bool = False, skip_scale: dict | None = None):
    """Foreground probabilities (B,1,S,S) for a normalized image batch.

    ``return_features`` also yields the output of the last 3x3 decoder block,
    which Grad-CAM attributes against.  ``skip_scale`` multiplies selected skip
    tensors (by level index) and exists for wiring checks.
    """
    expected = params["enc1.conv1.weight"].shape[1]
    if image.ndim != 4 or image.shape[1] != expected:
        raise ConfigurationError(f"generator expects B x {expected} x S x S input, got {image.shape}")
    if image.shape[2] % 2 ** GEN_LEVELS or image.shape[3] % 2 ** GEN_LEVELS:
        raise ConfigurationError(f"generator input size {image.shape[2:]} not divisible by {2 ** GEN_LEVELS}")
    probs, feats = _unet(params, image, GEN_LEVELS, train, norm=True, skip_scale=skip_scale)
    return (probs, feats) if return_features else probs


def discriminator_forward(params: ModelParams, mask: Tensor, skip_scale: dict | None = None) -> Tensor:
    """Per-pixel realism map (B,1,S,S) for a single-channel mask batch."""
    if mask.ndim != 4 or mask.shape[1] != 1:
        raise ConfigurationError(f"discriminator expects B x 1 x S x S input, got {mask.shape}")
    if mask.shape[2] % 2 ** DISC_LEVELS or mask.shape[3] % 2 ** DISC_LEVELS:
        raise ConfigurationError(f"discriminator input size {mask.shape[2:]} not divisible by {2 ** DISC_LEVELS}")
    probs, _ = _unet(params, mask, DISC_LEVELS, train=False, norm=False, skip_scale=skip_scale)
    return probs
