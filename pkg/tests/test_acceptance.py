"""End-to-end acceptance checks, one printed PASS/FAIL line per criterion.

The desk training and the six-variant ablation train real models, so this
module takes most of an hour on one CPU core.  Lines are collected in
``REPORT`` and repeated in the terminal summary by ``conftest.py``.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import flood_fill_labels, overlap_scores, small_masks, surface_distances
from roisgan.ablation import read_ablation_means
from roisgan.checkpoint import load_checkpoint, save_checkpoint
from roisgan.cli import main
from roisgan.data import netpbm
from roisgan.data.dataset import load_dataset
from roisgan.data.split import SplitSpec
from roisgan.explain import error_map, gradcam
from roisgan.losses import ABLATION_VARIANTS
from roisgan.metrics import assd, confusion, dice, hausdorff, iou, precision, read_metrics_csv, recall
from roisgan.pipeline import evaluate_probs, inject_speckle, predict_samples, split_samples
from roisgan.postprocess import connected_components_8, default_min_area, filter_min_area
from roisgan.trainer import generator_from_checkpoint, norm_from_checkpoint, normalize_batch

ROOT = Path(__file__).resolve().parents[1]
DESK_INI = ROOT / "configs" / "desk.ini"
ABLATION_INI = ROOT / "configs" / "ablation.ini"
TAU = 0.3
REPORT: list[str] = []


def report(capsys, criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
    REPORT.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_data")
    assert main(["synth", "--n", "250", "--style", "multiplexed", "--size", "64", "--seed", "42",
                 "--out", str(root), "-q"]) == 0
    return root


@pytest.fixture(scope="module")
def desk_run(desk_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_run")
    t0 = time.process_time()
    rc = main(["train", "--config", str(DESK_INI), "--root", str(desk_data), "--out", str(out), "-q"])
    cpu = time.process_time() - t0
    assert rc == 0
    ckpt = out / "checkpoints" / "best.ckpt"
    for flag in ("on", "off"):
        assert main(["eval", "--config", str(DESK_INI), "--root", str(desk_data), "--out", str(out),
                     "--checkpoint", str(ckpt), "--postprocess", flag, "-q"]) == 0
    return {"out": out, "cpu": cpu, "ckpt": ckpt}


@pytest.fixture(scope="module")
def desk_test_probs(desk_data, desk_run):
    data = load_checkpoint(desk_run["ckpt"])
    gen, norm = generator_from_checkpoint(data), norm_from_checkpoint(data)
    test = split_samples(load_dataset(desk_data, 64), SplitSpec()).test
    return gen, norm, test, predict_samples(gen, test, norm)


# 1: gradients

def test_criterion_1_gradient_checks(capsys):
    t0 = time.perf_counter()
    r = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "-k", "grad",
                        str(ROOT / "tests" / "test_tensor.py"), str(ROOT / "tests" / "test_losses.py")],
                       capture_output=True, text=True, cwd=ROOT)
    wall = time.perf_counter() - t0
    summary = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr[-200:]
    ok = r.returncode == 0 and wall < 120 and " passed" in summary
    report(capsys, 1, ok, f"finite-difference suite ({summary}) in {wall:.1f}s, limit 120s")


# 2: metric oracles

def test_criterion_2_metric_oracles(capsys):
    masks = small_masks(3, 4)
    worst_overlap = worst_dist = worst_ident = 0.0
    pairs = 0

    def compare(p, g):
        nonlocal worst_overlap, worst_dist, worst_ident, pairs
        ref = overlap_scores(p, g)
        got = (dice(p, g), iou(p, g), precision(p, g), recall(p, g))
        want = (ref["dice"], ref["iou"], ref["precision"], ref["recall"])
        worst_overlap = max(worst_overlap, max(abs(a - b) for a, b in zip(got, want)))
        hd, sd = surface_distances(p, g)
        worst_dist = max(worst_dist, abs(hausdorff(p, g) - hd), abs(assd(p, g) - sd))
        d, j, pr, rc = got
        worst_ident = max(worst_ident, abs(d - 2 * j / (1 + j)))
        if pr + rc > 0:
            worst_ident = max(worst_ident, abs(d - 2 * pr * rc / (pr + rc)))
        pairs += 1

    for p in masks:
        for g in masks:
            compare(p, g)
    rng = np.random.default_rng(2)
    for _ in range(1000):
        dens = rng.uniform(0.05, 0.6, size=2)
        compare(rng.random((16, 16)) < dens[0], rng.random((16, 16)) < dens[1])
    ok = worst_overlap == 0.0 and worst_dist <= 1e-9 and worst_ident <= 1e-12
    report(capsys, 2, ok, f"{pairs} pairs; overlap max diff {worst_overlap:.1e} (exact), distance "
                          f"{worst_dist:.1e} (<=1e-9), identities {worst_ident:.1e} (<=1e-12)")


# 3: connected components

def test_criterion_3_components(capsys):
    rng = np.random.default_rng(3)
    partition_ok = filter_ok = 0
    for i in range(500):
        m = rng.random((32, 32)) < rng.uniform(0.1, 0.7)
        ref, k = flood_fill_labels(m)
        cc = connected_components_8(m)
        partition_ok += int(cc.n == k and np.array_equal(cc.labels, ref))
        min_area = int(rng.integers(1, 30))
        keep = np.zeros_like(m)
        for lab in range(1, k + 1):
            comp = ref == lab
            if comp.sum() >= min_area:
                keep |= comp
        filter_ok += int(np.array_equal(filter_min_area(cc, min_area).astype(bool), keep))
    scaled = default_min_area(64), default_min_area(256)
    ok = partition_ok == 500 and filter_ok == 500 and scaled == (19, 300)
    report(capsys, 3, ok, f"labelings identical {partition_ok}/500, area filter exact {filter_ok}/500, "
                          f"min_area 256px={scaled[1]} 64px={scaled[0]}")


# 4: desk training

def test_criterion_4_desk_training(capsys, desk_run):
    out = desk_run["out"]
    epochs = len((out / "history.csv").read_text().splitlines()) - 1
    rep = read_metrics_csv(out / "metrics.csv")
    d = rep.mean["dice"]
    cpu_min = desk_run["cpu"] / 60
    ok = d >= 0.85 and epochs <= 300 and cpu_min <= 30
    report(capsys, 4, ok, f"test Dice after post-processing {d:.4f} (>=0.85) on {len(rep.ids)} samples, "
                          f"{epochs} epochs (<=300), {cpu_min:.1f} CPU-min (<=30)")


# 5: post-processing on speckled predictions

@pytest.fixture(scope="module")
def speckle_metrics(desk_test_probs):
    _, _, test, probs = desk_test_probs
    noisy = inject_speckle(probs, np.random.default_rng(42), 50, 1, 8, avoid=probs[:, 0] >= TAU)
    return {
        "clean_raw": evaluate_probs(probs, test, False, TAU).mean,
        "raw": evaluate_probs(noisy, test, False, TAU).mean,
        "pp": evaluate_probs(noisy, test, True, TAU).mean,
    }


def test_criterion_5a_speckle_hd(capsys, speckle_metrics):
    raw, pp = speckle_metrics["raw"]["hd"], speckle_metrics["pp"]["hd"]
    drop = 1 - pp / raw
    report(capsys, "5a", drop >= 0.5, f"mean HD {raw:.3f} -> {pp:.3f}, reduction {100 * drop:.1f}% (>=50%)")


def test_criterion_5b_speckle_assd(capsys, speckle_metrics):
    raw, pp = speckle_metrics["raw"]["assd"], speckle_metrics["pp"]["assd"]
    drop = 1 - pp / raw
    report(capsys, "5b", drop >= 0.7, f"mean ASSD {raw:.3f} -> {pp:.3f}, reduction {100 * drop:.1f}% (>=70%)")


def test_criterion_5c_speckle_dice(capsys, speckle_metrics):
    raw, pp = speckle_metrics["raw"]["dice"], speckle_metrics["pp"]["dice"]
    clean = speckle_metrics["clean_raw"]["dice"]
    change = abs(pp - raw)
    report(capsys, "5c", change <= 0.02,
           f"mean Dice {raw:.4f} -> {pp:.4f}, change {change:.4f} (<=0.02); "
           f"unspeckled raw Dice {clean:.4f}")


# 6: ablation

def test_criterion_6_ablation(capsys, desk_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    rc = main(["ablate", "--config", str(ABLATION_INI), "--root", str(desk_data), "--out", str(out), "-q"])
    means = read_ablation_means(out / "ablation.csv") if rc == 0 else {}
    labels = [v.label for v in ABLATION_VARIANTS]
    complete = rc == 0 and list(means) == labels and all(np.isfinite(list(m.values())).all() for m in means.values())
    best = max(means.values(), key=lambda m: m["dice"])["dice"] if means else float("nan")
    equal = means.get("DiceBceEqual", {}).get("dice", float("nan"))
    gap = best - equal
    ok = complete and gap <= 0.05
    summary = ", ".join(f"{k} {v['dice']:.4f}" for k, v in means.items())
    report(capsys, 6, ok, f"exit {rc}, {len(means)}/{len(labels)} variants; Dice {summary}; "
                          f"DiceBceEqual gap to best {gap:.4f} (<=0.05)")


# 7: determinism and round-trips

def test_criterion_7_determinism_and_round_trips(capsys, tmp_path, desk_run, desk_test_probs):
    data = tmp_path / "data"
    assert main(["synth", "--n", "40", "--style", "multiplexed", "--size", "64", "--seed", "7",
                 "--out", str(data), "-q"]) == 0
    histories = []
    for name in ("a", "b"):
        assert main(["train", "--config", str(DESK_INI), "--root", str(data), "--out", str(tmp_path / name),
                     "--max-epochs", "3", "-q"]) == 0
        histories.append((tmp_path / name / "history.csv").read_bytes())
    history_ok = histories[0] == histories[1]

    ck = load_checkpoint(desk_run["ckpt"])
    save_checkpoint(tmp_path / "again.ckpt", ck.params, ck.state, ck.epoch, ck.best_dice)
    ckpt_ok = (tmp_path / "again.ckpt").read_bytes() == desk_run["ckpt"].read_bytes()

    rng = np.random.default_rng(7)
    netpbm_ok = True
    for shape in ((5, 7), (6, 4, 3), (64, 64), (64, 64, 3)):
        arr = rng.integers(0, 256, size=shape, dtype=np.uint8)
        buf = netpbm.encode(arr)
        netpbm_ok &= np.array_equal(netpbm.decode(buf), arr) and netpbm.encode(netpbm.decode(buf)) == buf
    for f in sorted(data.rglob("*.p[gp]m"))[:20]:
        raw = f.read_bytes()
        netpbm_ok &= netpbm.encode(netpbm.decode(raw)) == raw

    gen, norm, test, probs = desk_test_probs
    cam_ok = err_ok = True
    for s, p in list(zip(test, probs))[:6]:
        heat = gradcam(gen, normalize_batch(s.image[None], norm, gen.dtype)[0])
        if heat.max() > heat.min():
            cam_ok &= heat.min() == 0.0 and heat.max() == 1.0
        cam_ok &= bool(np.all((heat >= 0) & (heat <= 1)))
        pred = p[0] >= TAU
        emap = error_map(pred, s.mask[0])
        tp, fp, fn, tn = confusion(pred, s.mask[0])
        colours = [int(np.all(emap == c, axis=-1).sum()) for c in ((0, 1, 0), (1, 0, 0), (0, 0, 1), (0, 0, 0))]
        err_ok &= colours == [tp, fp, fn, tn]
    ok = history_ok and ckpt_ok and netpbm_ok and cam_ok and err_ok
    report(capsys, 7, ok, f"history bitwise {history_ok}, checkpoint save/load/save {ckpt_ok}, "
                          f"netpbm round-trip {netpbm_ok}, Grad-CAM range and extremes {cam_ok}, "
                          f"error-map counts {err_ok}")
