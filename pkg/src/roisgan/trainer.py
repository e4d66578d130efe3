"""Adversarial training loop, validation, early stopping and resume.

Randomness comes from one root seed split into independent streams, each a
``numpy.random.default_rng([seed, stream, ...])``:

* ``STREAM_INIT_G`` / ``STREAM_INIT_D``: parameter initialization
* ``STREAM_SHUFFLE`` + epoch: batch order
* ``STREAM_AUGMENT`` + epoch: augmentation draws
* ``STREAM_GP`` + epoch: gradient-penalty directions

Because every per-epoch stream is rebuilt from ``(seed, stream, epoch)``, a
run resumed from a checkpoint sees exactly the draws an uninterrupted run
would have seen.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint
from .data.dataset import Sample
from .data.transforms import AugmentationConfig, NormStats, augment, compute_norm_stats
from .losses import (DiscLossVariant, LossWeights, discriminator_loss, generator_loss,
                     gradient_penalty_from_maps, perturbed_masks)
from .metrics import dice
from .models import (DiscriminatorConfig, GeneratorConfig, ModelParams, build_discriminator,
                     build_generator, discriminator_forward, generator_forward)
from .tensor import AdamState, ConfigurationError, Tensor, adam_step

log = logging.getLogger(__name__)

STREAM_INIT_G, STREAM_INIT_D, STREAM_SHUFFLE, STREAM_AUGMENT, STREAM_GP = range(5)
HISTORY_FIELDS = ("epoch", "loss_g", "loss_d", "gp", "val_dice")
_BUFFER_SUFFIXES = (".running_mean", ".running_var")


def stream(seed: int, stream_id: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream_id, *extra])


class TrainingDivergedError(RuntimeError):
    """A loss term became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    lr_generator: float = 5e-4
    lr_discriminator: float = 1e-5
    loss_weights: LossWeights = LossWeights()
    max_epochs: int = 1000
    patience: int = 50
    batch_size: int = 4
    disc_variant: DiscLossVariant = DiscLossVariant()
    seed: int = 42
    eval_threshold: float = 0.3
    image_size: int = 64
    gen_width: int = 8
    disc_width: int = 8
    in_channels: int = 3
    eps_fd: float = 1e-3
    k_dirs: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    min_improvement: float = 1e-6
    precision: str = "float32"
    augment: AugmentationConfig = AugmentationConfig()

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2 for batch norm, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.lr_generator < 0 or self.lr_discriminator < 0:
            raise ConfigurationError("learning rates must be >= 0")
        if not 0.0 <= self.eval_threshold <= 1.0:
            raise ConfigurationError(f"eval_threshold must lie in [0,1], got {self.eval_threshold}")
        if self.eps_fd <= 0 or self.k_dirs < 1:
            raise ConfigurationError("eps_fd must be > 0 and k_dirs >= 1")
        if self.precision not in ("float32", "float64"):
            raise ConfigurationError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        self.generator_config().validate()
        self.discriminator_config().validate()

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(self.in_channels, self.gen_width, self.image_size)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(self.disc_width, self.image_size)


@dataclass(frozen=True)
class StepLosses:
    loss_g: float
    loss_d: float
    gp: float


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    loss_g: float
    loss_d: float
    gp: float
    val_dice: float
    seconds: float = 0.0

    def __post_init__(self):
        for name in ("loss_g", "loss_d", "gp", "val_dice", "seconds"):
            if not math.isfinite(getattr(self, name)):
                raise TrainingDivergedError(f"epoch {self.epoch}: {name} is not finite")

    def row(self) -> list[str]:
        return [str(self.epoch)] + [repr(float(getattr(self, k))) for k in HISTORY_FIELDS[1:]]


@dataclass
class TrainState:
    gen: ModelParams
    disc: ModelParams
    opt_g: AdamState
    opt_d: AdamState
    norm: NormStats
    epoch: int = 0
    best_dice: float = -math.inf
    best_epoch: int = 0
    best_gen: ModelParams | None = None

    @classmethod
    def fresh(cls, cfg: TrainConfig, norm: NormStats) -> "TrainState":
        gen = build_generator(cfg.generator_config(), [cfg.seed, STREAM_INIT_G], cfg.dtype)
        disc = build_discriminator(cfg.discriminator_config(), [cfg.seed, STREAM_INIT_D], cfg.dtype)
        return cls(gen, disc, AdamState(), AdamState(), norm)


def _f32_stats(stats: NormStats) -> NormStats:
    # round once so a checkpointed run normalizes exactly like the original
    return NormStats(stats.mean.astype(np.float32).astype(np.float64),
                     stats.std.astype(np.float32).astype(np.float64))


def normalize_batch(images: np.ndarray, norm: NormStats, dtype=np.float32) -> np.ndarray:
    mean = norm.mean.reshape(1, -1, 1, 1)
    std = norm.std.reshape(1, -1, 1, 1)
    return ((images.astype(np.float64) - mean) / std).astype(dtype)


def _require_finite(value: Tensor, term: str) -> None:
    v = float(value.data)
    if not math.isfinite(v):
        raise TrainingDivergedError(f"{term} is {v}; training aborted")


def train_step(images: np.ndarray, masks: np.ndarray, gen: ModelParams, disc: ModelParams,
               opt_g: AdamState, opt_d: AdamState, cfg: TrainConfig,
               rng: np.random.Generator) -> StepLosses:
    """One discriminator update followed by one generator update.

    ``images`` are normalized (B,C,S,S) and ``masks`` binary (B,1,S,S).  The
    generator forward runs once; its output is detached for the
    discriminator step and reused, on the same tape, for the generator step
    against the freshly updated discriminator.
    """
    w = cfg.loss_weights
    b = masks.shape[0]
    y_g = Tensor(masks)
    g_tape = T.Tape()
    with g_tape:
        y_p = generator_forward(gen, Tensor(images), train=True)

    # real, fake and both perturbed batches share one pass (no batch norm in D)
    fd = perturbed_masks(y_g, rng, cfg.eps_fd, cfg.k_dirs)
    stacked = Tensor(np.concatenate([masks, y_p.data, fd]))
    d_params = disc.trainable()
    T.zero_grad(d_params.values())
    with T.Tape() as d_tape:
        out = discriminator_forward(disc, stacked)
        d_real = T.narrow(out, 0, b)
        d_fake = T.narrow(out, b, 2 * b)
        adv = discriminator_loss(y_g, Tensor(y_p.data), d_real, d_fake, cfg.disc_variant, w.epsilon)
        gp = gradient_penalty_from_maps(T.narrow(out, 2 * b, out.shape[0]), b * cfg.k_dirs, cfg.eps_fd)
        loss_d = T.add(adv, T.mul_scalar(gp, w.lambda_gp))
    _require_finite(adv, f"discriminator loss ({cfg.disc_variant.label})")
    _require_finite(gp, "gradient penalty")
    d_tape.backward(loss_d)
    adam_step(d_params, opt_d, cfg.lr_discriminator, cfg.beta1, cfg.beta2, cfg.adam_eps)

    g_params = gen.trainable()
    T.zero_grad(g_params.values())
    with g_tape:
        d_on_fake = discriminator_forward(disc.frozen(), y_p) if w.lambda_adv > 0 else None
        loss_g = generator_loss(y_g, y_p, d_on_fake, w)
    _require_finite(loss_g, "generator loss (dice + adversarial)")
    g_tape.backward(loss_g)
    adam_step(g_params, opt_g, cfg.lr_generator, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return StepLosses(float(loss_g.data), float(loss_d.data), float(gp.data))


def predict(gen: ModelParams, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Eval-mode probabilities (N,1,S,S) for normalized images."""
    out = []
    with T.no_record():
        for i in range(0, len(images), batch_size):
            out.append(generator_forward(gen, Tensor(images[i:i + batch_size]), train=False).data)
    return np.concatenate(out)


def validate(gen: ModelParams, images: np.ndarray, masks: np.ndarray, eval_threshold: float = 0.3) -> float:
    """Mean per-sample Dice of thresholded eval-mode predictions."""
    if len(images) == 0:
        raise ValueError("validation set is empty")
    probs = predict(gen, images)
    return float(np.mean([dice(p >= eval_threshold, m) for p, m in zip(probs, masks)]))


def _stack(samples: list[Sample], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([s.image for s in samples]).astype(dtype),
            np.stack([s.mask for s in samples]).astype(dtype))


def epoch_batches(samples: list[Sample], cfg: TrainConfig, epoch: int, norm: NormStats):
    """Yield (images, masks) batches for ``epoch`` (1-based); a trailing single sample is dropped."""
    order = stream(cfg.seed, STREAM_SHUFFLE, epoch).permutation(len(samples))
    aug_rng = stream(cfg.seed, STREAM_AUGMENT, epoch)
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        if len(idx) < 2:
            break
        batch = [augment(samples[i], cfg.augment, aug_rng, cfg.image_size) for i in idx]
        images, masks = _stack(batch, cfg.dtype)
        yield normalize_batch(images, norm, cfg.dtype), masks


def train_epoch(state: TrainState, samples: list[Sample], cfg: TrainConfig, epoch: int) -> StepLosses:
    gp_rng = stream(cfg.seed, STREAM_GP, epoch)
    steps = [train_step(x, y, state.gen, state.disc, state.opt_g, state.opt_d, cfg, gp_rng)
             for x, y in epoch_batches(samples, cfg, epoch, state.norm)]
    if not steps:
        raise ValueError("training set yields no batch of at least two samples")
    return StepLosses(*(float(np.mean([getattr(s, k) for s in steps])) for k in ("loss_g", "loss_d", "gp")))


# checkpoint plumbing

def _opt_records(prefix: str, st: AdamState) -> dict[str, np.ndarray]:
    if st.t >= 2 ** 24:
        raise ValueError("optimizer step count exceeds float32 integer range")
    rec = {f"{prefix}/t": np.array([st.t], dtype=np.float32)}
    for name in st.m:
        rec[f"{prefix}/m/{name}"] = st.m[name].astype(np.float32)
        rec[f"{prefix}/v/{name}"] = st.v[name].astype(np.float32)
    return rec


def _opt_from(data: CheckpointData, prefix: str, dtype=np.float32) -> AdamState:
    grp = data.group(prefix, "state")
    st = AdamState(t=int(grp.pop("t")[0]) if "t" in grp else 0)
    for key, arr in grp.items():
        kind, name = key.split("/", 1)
        (st.m if kind == "m" else st.v)[name] = arr.astype(dtype)
    return st


def _param_records(prefix: str, p: ModelParams) -> dict[str, np.ndarray]:
    # 64-bit runs are stored rounded to float32
    return {f"{prefix}/{k}": v.data.astype(np.float32) for k, v in p.tensors.items()}


def params_from_records(records: dict[str, np.ndarray], dtype=np.float32) -> ModelParams:
    p = ModelParams()
    for name, arr in records.items():
        p.add(name, arr.astype(dtype), buffer=name.endswith(_BUFFER_SUFFIXES))
    return p


def _check_layout(p: ModelParams, template: ModelParams, what: str) -> None:
    got = [(k, v.shape) for k, v in p.tensors.items()]
    want = [(k, v.shape) for k, v in template.tensors.items()]
    if got != want:
        raise ConfigurationError(f"checkpoint {what} layout does not match the configured architecture")


def generator_from_checkpoint(data: CheckpointData, prefix: str = "gen") -> ModelParams:
    """Generator parameters, with width and channels inferred from the stored tensors."""
    gen = params_from_records(data.group(prefix))
    if "enc1.conv1.weight" not in gen:
        raise ConfigurationError(f"checkpoint has no '{prefix}' generator parameters")
    w, cin = gen["enc1.conv1.weight"].shape[:2]
    template = build_generator(GeneratorConfig(in_channels=cin, base_width=w, image_size=16), 0)
    _check_layout(gen, template, "generator")
    return gen


def norm_from_checkpoint(data: CheckpointData) -> NormStats:
    if "norm/mean" not in data.state:
        raise ConfigurationError("checkpoint lacks normalization statistics")
    return NormStats(data.state["norm/mean"].astype(np.float64), data.state["norm/std"].astype(np.float64))


def save_state(path, state: TrainState, include_best: bool) -> None:
    params = {**_param_records("gen", state.gen), **_param_records("disc", state.disc)}
    if include_best and state.best_gen is not None:
        params.update(_param_records("best_gen", state.best_gen))
    extra = {
        "norm/mean": state.norm.mean.astype(np.float32),
        "norm/std": state.norm.std.astype(np.float32),
        "trainer/best_epoch": np.array([state.best_epoch], dtype=np.float32),
    }
    st = {**_opt_records("opt_g", state.opt_g), **_opt_records("opt_d", state.opt_d), **extra}
    save_checkpoint(path, params, st, state.epoch, state.best_dice)


def load_state(path, cfg: TrainConfig) -> TrainState:
    data = load_checkpoint(path)
    gen = params_from_records(data.group("gen"), cfg.dtype)
    disc = params_from_records(data.group("disc"), cfg.dtype)
    _check_layout(gen, build_generator(cfg.generator_config(), 0), "generator")
    _check_layout(disc, build_discriminator(cfg.discriminator_config(), 0), "discriminator")
    best = data.group("best_gen")
    state = TrainState(gen, disc, _opt_from(data, "opt_g", cfg.dtype), _opt_from(data, "opt_d", cfg.dtype),
                       norm_from_checkpoint(data), epoch=int(data.epoch), best_dice=data.best_dice,
                       best_epoch=int(data.state["trainer/best_epoch"][0]))
    state.best_gen = params_from_records(best, cfg.dtype) if best else gen.copy()
    return state


# fitting

@dataclass
class FitResult:
    history: list[EpochReport]
    state: TrainState
    stopped_early: bool = False
    checkpoint_dir: Path | None = None

    @property
    def best_gen(self) -> ModelParams:
        return self.state.best_gen

    @property
    def best_epoch(self) -> int:
        return self.state.best_epoch

    @property
    def best_dice(self) -> float:
        return self.state.best_dice


def write_history(path, history: list[EpochReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow(r.row())


def write_timing(path, history: list[EpochReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "seconds"))
        for r in history:
            w.writerow((r.epoch, f"{r.seconds:.3f}"))


def read_history(path) -> list[EpochReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EpochReport(int(r["epoch"]), float(r["loss_g"]), float(r["loss_d"]), float(r["gp"]),
                            float(r["val_dice"])) for r in csv.DictReader(fh)]


def should_stop(epoch: int, best_epoch: int, patience: int) -> bool:
    return epoch - best_epoch >= patience


def fit(train: list[Sample], val: list[Sample], cfg: TrainConfig, out_dir=None,
        resume=None, norm: NormStats | None = None, on_epoch=None) -> FitResult:
    """Train until ``max_epochs`` or until validation Dice stalls for ``patience`` epochs.

    With ``out_dir`` the run writes ``history.csv``, ``timing.csv`` and
    ``checkpoints/{best,last}.ckpt``.  ``resume`` continues from a ``last.ckpt``.
    """
    cfg.validate()
    if not train or not val:
        raise ValueError("fit needs nonempty training and validation sets")
    out_dir = Path(out_dir) if out_dir is not None else None
    if resume is not None:
        state = load_state(resume, cfg)
        history = []
        if out_dir is not None and (out_dir / "history.csv").exists():
            history = [r for r in read_history(out_dir / "history.csv") if r.epoch <= state.epoch]
        log.info("resumed at epoch %d (best %.4f at epoch %d)", state.epoch, state.best_dice, state.best_epoch)
    else:
        if norm is None:
            norm = compute_norm_stats(s.image for s in train)
        state = TrainState.fresh(cfg, _f32_stats(norm))
        history = []
    val_x, val_y = _stack(val, cfg.dtype)
    val_x = normalize_batch(val_x, state.norm, cfg.dtype)
    ckpt_dir = out_dir / "checkpoints" if out_dir is not None else None
    if out_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    stopped = resume is not None and should_stop(state.epoch, state.best_epoch, cfg.patience)
    while not stopped and state.epoch < cfg.max_epochs:
        epoch = state.epoch + 1
        t0 = time.perf_counter()
        losses = train_epoch(state, train, cfg, epoch)
        val_dice = validate(state.gen, val_x, val_y, cfg.eval_threshold)
        state.epoch = epoch
        report = EpochReport(epoch, losses.loss_g, losses.loss_d, losses.gp, val_dice,
                             time.perf_counter() - t0)
        history.append(report)
        improved = val_dice > state.best_dice + cfg.min_improvement
        if improved:
            state.best_dice = val_dice
            state.best_epoch = epoch
            state.best_gen = state.gen.copy()
        log.info("epoch %d  L_G %.4f  L_D %.4f  gp %.4g  val dice %.4f%s  (%.1fs)", epoch, losses.loss_g,
                 losses.loss_d, losses.gp, val_dice, " *" if improved else "", report.seconds)
        if out_dir is not None:
            if improved:
                save_state(ckpt_dir / "best.ckpt", state, include_best=False)
            save_state(ckpt_dir / "last.ckpt", state, include_best=True)
            write_history(out_dir / "history.csv", history)
            write_timing(out_dir / "timing.csv", history)
        if on_epoch is not None:
            on_epoch(report, state)
        stopped = should_stop(epoch, state.best_epoch, cfg.patience)
    return FitResult(history, state, stopped, ckpt_dir)
