"""Command-line entry point: ``roisgan {synth,train,eval,ablate,gradcam}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .tensor import ConfigurationError

log = logging.getLogger("roisgan")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments, config or missing inputs."""


def _thread_limit():
    raw = os.environ.get("ROISGAN_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"ROISGAN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"ROISGAN_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    p = argparse.ArgumentParser(prog="roisgan", description="Region-guided adversarial ROI segmentation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--style", choices=("cfos", "neun", "multiplexed"), required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common], help="train generator and discriminator",
                       epilog="Any config key may be overridden with --key value.")
    t.add_argument("--config")
    t.add_argument("--resume", help="checkpoint (last.ckpt) to continue from")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    e.add_argument("--config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--postprocess", default="on", choices=("on", "off"))

    a = sub.add_parser("ablate", parents=[common], help="train and compare the discriminator-loss variants")
    a.add_argument("--config")

    g = sub.add_parser("gradcam", parents=[common], help="write Grad-CAM, overlay and error-map images")
    g.add_argument("--config")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--ids", required=True, help="comma-separated sample ids")
    return p


def _config(args, extra):
    from .config import load_config, parse_overrides

    overrides = parse_overrides(extra)
    try:
        return load_config(args.config, overrides)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


def _splits(cfg):
    from .data.dataset import MANIFEST, load_dataset
    from .pipeline import split_samples

    root = cfg.data_root
    if not cfg.values["root"]:
        raise UsageError("no dataset given; set [data] root or pass --root")
    if not (root / MANIFEST).is_file():
        raise UsageError(f"dataset not found: {root / MANIFEST} does not exist")
    samples = load_dataset(root, cfg.values["image_size"], cfg.values["allow_png"])
    return split_samples(samples, cfg.split_spec())


def _load_checkpoint(path):
    from .checkpoint import load_checkpoint

    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    return load_checkpoint(p)


def cmd_synth(args) -> int:
    from .data.synth import synth_generate

    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if args.size < 16 or args.size % 16:
        raise UsageError(f"--size must be a positive multiple of 16, got {args.size}")
    rows = synth_generate(args.n, args.style, args.size, args.seed, args.out)
    print(f"wrote {len(rows)} {args.style} samples ({args.size}x{args.size}, seed {args.seed}) to {args.out}")
    return EXIT_OK


def cmd_train(args, extra) -> int:
    from .trainer import fit

    cfg = _config(args, extra)
    if args.resume and not Path(args.resume).is_file():
        raise UsageError(f"checkpoint not found: {args.resume}")
    splits = _splits(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    result = fit(splits.train, splits.val, cfg.train_config(), out_dir=out, resume=args.resume)
    print(f"trained {result.state.epoch} epochs; best validation dice {result.best_dice:.4f} "
          f"at epoch {result.best_epoch}; checkpoints in {result.checkpoint_dir}")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    from .pipeline import evaluate_probs, predict_samples
    from .trainer import generator_from_checkpoint, norm_from_checkpoint

    cfg = _config(args, extra)
    data = _load_checkpoint(args.checkpoint)
    try:
        gen = generator_from_checkpoint(data)
        norm = norm_from_checkpoint(data)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    samples = _splits(cfg).get(args.split)
    probs = predict_samples(gen, samples, norm)
    use_pp = args.postprocess == "on"
    report = evaluate_probs(probs, samples, use_pp, cfg.values["tau"], cfg.resolved_min_area())
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    path = out / ("metrics.csv" if use_pp else "metrics_raw.csv")
    report.write_csv(path)
    m = report.mean
    print(f"{args.split} ({len(samples)} samples, postprocess {args.postprocess}): dice {m['dice']:.4f} "
          f"iou {m['iou']:.4f} hd {m['hd']:.3f} assd {m['assd']:.3f} -> {path}")
    return EXIT_OK


def cmd_ablate(args, extra) -> int:
    from .ablation import run_ablation

    cfg = _config(args, extra)
    splits = _splits(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    reports = run_ablation(splits, cfg.train_config(), out, cfg.values["tau"], cfg.resolved_min_area())
    for label, rep in reports.items():
        print(f"{label:28s} dice {rep.mean['dice']:.4f}  hd {rep.mean['hd']:.3f}  assd {rep.mean['assd']:.3f}")
    print(f"wrote {out / 'ablation.csv'}")
    return EXIT_OK


def cmd_gradcam(args, extra) -> int:
    import numpy as np

    from .explain import gradcam, write_visuals
    from .pipeline import masks_from_probs, predict_samples
    from .trainer import generator_from_checkpoint, norm_from_checkpoint, normalize_batch

    cfg = _config(args, extra)
    data = _load_checkpoint(args.checkpoint)
    gen = generator_from_checkpoint(data)
    norm = norm_from_checkpoint(data)
    splits = _splits(cfg)
    by_id = {s.id: s for part in (splits.train, splits.val, splits.test) for s in part}
    ids = [i.strip() for i in args.ids.split(",") if i.strip()]
    unknown = [i for i in ids if i not in by_id]
    if not ids or unknown:
        raise UsageError(f"unknown sample id(s): {', '.join(unknown) or '(none given)'}")
    samples = [by_id[i] for i in ids]
    probs = predict_samples(gen, samples, norm)
    preds = masks_from_probs(probs, True, cfg.values["tau"], cfg.resolved_min_area())
    viz = cfg.out_dir / "viz"
    for s, pred in zip(samples, preds):
        x = normalize_batch(s.image[None], norm, gen.dtype)[0]
        heat = gradcam(gen, x)
        write_visuals(viz, s.id, s.image, heat, pred, s.mask)
    print(f"wrote {3 * len(samples)} images to {viz}")
    return EXIT_OK


def main(argv=None) -> int:
    from .trainer import TrainingDivergedError

    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "synth" and extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    handlers = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "gradcam": cmd_gradcam}
    try:
        limiter = _thread_limit()
        try:
            if args.command == "synth":
                return cmd_synth(args)
            return handlers[args.command](args, extra)
        finally:
            if limiter is not None:
                limiter.unregister()
    except (UsageError, ConfigurationError) as exc:
        print(f"roisgan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, OSError, ValueError, RuntimeError) as exc:
        print(f"roisgan {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
