import subprocess
import sys

import numpy as np
import pytest

from roisgan.ablation import read_ablation_means
from roisgan.cli import main
from roisgan.data.dataset import load_dataset
from roisgan.losses import ABLATION_VARIANTS
from roisgan.metrics import read_metrics_csv

TINY = ["--image-size", "16", "--gen-width", "2", "--disc-width", "2", "--batch-size", "2", "-q"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["synth", "--n", "24", "--style", "multiplexed", "--size", "16", "--seed", "5",
                 "--out", str(root), "-q"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["train", "--root", str(dataset), "--out", str(out), "--max-epochs", "2"] + TINY)
    assert rc == 0
    return out


def test_synth_writes_manifest_and_images(dataset):
    samples = load_dataset(dataset)
    assert len(samples) == 24
    assert samples[0].image.shape == (3, 16, 16)
    assert (dataset / "manifest.tsv").read_text().startswith("id\timage\tmask\tregion")


def test_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--n", "3", "--style", "neun", "--size", "32", "--seed", "1",
                     "--out", str(tmp_path / name), "-q"]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_outputs(trained):
    assert (trained / "history.csv").read_text().splitlines()[0] == "epoch,loss_g,loss_d,gp,val_dice"
    assert len((trained / "history.csv").read_text().splitlines()) == 3
    for f in ("checkpoints/best.ckpt", "checkpoints/last.ckpt", "config.ini", "timing.csv"):
        assert (trained / f).is_file(), f


def test_eval_writes_both_metric_files(dataset, trained, capsys):
    ckpt = str(trained / "checkpoints/best.ckpt")
    for flag, name in (("on", "metrics.csv"), ("off", "metrics_raw.csv")):
        rc = main(["eval", "--root", str(dataset), "--out", str(trained), "--checkpoint", ckpt,
                   "--postprocess", flag] + TINY)
        assert rc == 0
        rep = read_metrics_csv(trained / name)
        assert len(rep.ids) == len(rep.rows) == 4  # 24 samples -> 19/1/4
        assert 0 <= rep.mean["dice"] <= 1
    assert "dice" in capsys.readouterr().out


def test_eval_tau_override_changes_nothing_structural(dataset, trained):
    ckpt = str(trained / "checkpoints/best.ckpt")
    assert main(["eval", "--root", str(dataset), "--out", str(trained), "--checkpoint", ckpt, "--split", "val",
                 "--tau", "0.5", "--min-area", "0"] + TINY) == 0


def test_gradcam_writes_triplets(dataset, trained):
    ids = [s.id for s in load_dataset(dataset)[:2]]
    rc = main(["gradcam", "--root", str(dataset), "--out", str(trained), "--ids", ",".join(ids),
               "--checkpoint", str(trained / "checkpoints/best.ckpt")] + TINY)
    assert rc == 0
    for i in ids:
        for kind in ("cam", "overlay", "errmap"):
            assert (trained / "viz" / f"{i}_{kind}.ppm").is_file()


def test_resume_continues(dataset, trained, tmp_path):
    import shutil
    run = tmp_path / "r"
    shutil.copytree(trained, run)
    rc = main(["train", "--root", str(dataset), "--out", str(run), "--max-epochs", "3",
               "--resume", str(run / "checkpoints/last.ckpt")] + TINY)
    assert rc == 0
    assert len((run / "history.csv").read_text().splitlines()) == 4


def test_ablate_covers_all_variants(dataset, tmp_path):
    rc = main(["ablate", "--root", str(dataset), "--out", str(tmp_path), "--max-epochs", "1"] + TINY)
    assert rc == 0
    means = read_ablation_means(tmp_path / "ablation.csv")
    assert list(means) == [v.label for v in ABLATION_VARIANTS]
    assert all(np.isfinite(list(m.values())).all() for m in means.values())
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert len(lines) == 1 + len(ABLATION_VARIANTS) * 5


@pytest.mark.parametrize("argv", [
    ["train", "--root", "/nonexistent/data"],
    ["train", "--frobnicate", "1"],
    ["train", "--config", "/nonexistent.ini"],
    ["train", "--batch-size", "1", "--root", "/nonexistent/data"],
    ["eval", "--checkpoint", "/nonexistent.ckpt"],
    ["synth", "--n", "0", "--style", "cfos", "--out", "x"],
    ["synth", "--n", "2", "--style", "cfos", "--size", "40", "--out", "x"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv + ["-q"]) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_id_and_bad_checkpoint_exit_2(dataset, trained, tmp_path):
    base = ["gradcam", "--root", str(dataset), "--out", str(tmp_path)] + TINY
    assert main(base + ["--ids", "nope", "--checkpoint", str(trained / "checkpoints/best.ckpt")]) == 2
    assert main(base + ["--ids", "nope", "--checkpoint", str(tmp_path / "missing.ckpt")]) == 2


def test_corrupt_checkpoint_is_runtime_failure(dataset, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"ROISGAN1\x05")
    rc = main(["eval", "--root", str(dataset), "--out", str(tmp_path), "--checkpoint", str(bad)] + TINY)
    assert rc == 1


def test_bad_thread_setting(monkeypatch):
    monkeypatch.setenv("ROISGAN_THREADS", "zero")
    assert main(["synth", "--n", "1", "--style", "cfos", "--out", "unused", "-q"]) == 2


def test_module_entry_point_bad_style(tmp_path):
    r = subprocess.run([sys.executable, "-m", "roisgan", "synth", "--n", "1", "--style", "dapi",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2
    assert "dapi" in r.stderr
