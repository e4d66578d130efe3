"""Discriminator-loss ablation: one training run per variant on shared data."""
from __future__ import annotations

import csv
import logging
from dataclasses import replace
from pathlib import Path

from .losses import ABLATION_VARIANTS, DiscLossVariant
from .metrics import FIELDS, MetricsReport
from .pipeline import Splits, evaluate_probs, predict_samples
from .trainer import TrainConfig, fit

log = logging.getLogger(__name__)


def run_ablation(splits: Splits, cfg: TrainConfig, out_dir, tau: float = 0.3, min_area: int | None = None,
                 variants: tuple[DiscLossVariant, ...] = ABLATION_VARIANTS) -> dict[str, MetricsReport]:
    """Train every variant with the same seed and splits; return post-processed test metrics."""
    out_dir = Path(out_dir)
    reports = {}
    for variant in variants:
        log.info("ablation: training %s", variant.label)
        run_dir = out_dir / "ablation" / variant.label
        result = fit(splits.train, splits.val, replace(cfg, disc_variant=variant), out_dir=run_dir)
        probs = predict_samples(result.best_gen, splits.test, result.state.norm)
        reports[variant.label] = evaluate_probs(probs, splits.test, True, tau, min_area)
        log.info("ablation: %s test dice %.4f", variant.label, reports[variant.label].mean["dice"])
    write_ablation_csv(out_dir / "ablation.csv", reports)
    return reports


def write_ablation_csv(path, reports: dict[str, MetricsReport]) -> None:
    """Per-sample rows for every variant, each block closed by its MEAN row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant", "id") + FIELDS)
        for label, rep in reports.items():
            for sid, row in zip(rep.ids, rep.rows):
                w.writerow([label, sid] + [f"{row[k]:.6f}" for k in FIELDS])
            w.writerow([label, "MEAN"] + [f"{rep.mean[k]:.6f}" for k in FIELDS])


def read_ablation_means(path) -> dict[str, dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["variant"]: {k: float(r[k]) for k in FIELDS}
                for r in csv.DictReader(fh) if r["id"] == "MEAN"}
