import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roisgan.metrics import (FIELDS, assd, confusion, dice, evaluate_set, extract_boundary, hausdorff,
                             iou, precision, read_metrics_csv, recall)

from oracles import boundary_points, counts, overlap_scores, small_masks, surface_distances

mask_strategy = arrays(np.uint8, (8, 8), elements=st.integers(0, 1))


def px(shape, *coords):
    m = np.zeros(shape, dtype=np.uint8)
    for c in coords:
        m[c] = 1
    return m


def test_confusion_examples():
    a = px((4, 4), (0, 0), (0, 1), (1, 0), (1, 1))
    assert confusion(a, a)[1:3] == (0, 0)
    tp, fp, fn, tn = confusion(a, 1 - a)
    assert tp == 0 and tn == 0
    b = px((4, 4), (0, 0), (0, 1), (2, 2), (2, 3))
    assert confusion(a, b)[:3] == (2, 2, 2)
    with pytest.raises(ValueError):
        confusion(a, np.zeros((3, 4)))


def test_two_of_four_overlap_scores():
    a = px((4, 4), (0, 0), (0, 1), (1, 0), (1, 1))
    b = px((4, 4), (0, 0), (0, 1), (2, 2), (2, 3))
    assert dice(a, b) == 0.5
    assert iou(a, b) == pytest.approx(1 / 3, abs=1e-15)
    assert precision(a, b) == 0.5 and recall(a, b) == 0.5
    assert all(f(a, a) == 1.0 for f in (dice, iou, precision, recall))


def test_empty_conventions():
    e = np.zeros((5, 7), dtype=np.uint8)
    one = px((5, 7), (2, 3))
    assert all(f(e, e) == 1.0 for f in (dice, iou, precision, recall))
    assert hausdorff(e, e) == 0.0 and assd(e, e) == 0.0
    for p, g in ((e, one), (one, e)):
        assert all(f(p, g) == 0.0 for f in (dice, iou, precision, recall))
        assert hausdorff(p, g) == math.sqrt(5 ** 2 + 7 ** 2)
        assert assd(p, g) == math.sqrt(74)


def test_boundary_examples():
    assert extract_boundary(px((5, 5), (2, 2))).tolist() == [[2, 2]]
    sq = np.zeros((5, 5), dtype=np.uint8)
    sq[1:4, 1:4] = 1
    b = extract_boundary(sq)
    assert len(b) == 8 and [2, 2] not in b.tolist()
    full = np.ones((4, 6), dtype=np.uint8)
    border = {(y, x) for y in range(4) for x in range(6) if y in (0, 3) or x in (0, 5)}
    assert {tuple(p) for p in extract_boundary(full).tolist()} == border


def test_distance_examples():
    a, b = px((6, 6), (0, 0)), px((6, 6), (3, 4))
    assert hausdorff(a, b) == 5.0 and assd(a, b) == 5.0
    assert hausdorff(a, a) == 0.0 and assd(a, a) == 0.0


def test_exhaustive_3x3_pairs_against_oracles():
    masks = small_masks(3, 4)
    assert len(masks) == 1 + 9 + 36 + 84 + 126
    bpts = [boundary_points(m) for m in masks]
    for m, pts in zip(masks, bpts):
        assert sorted(map(tuple, extract_boundary(m).tolist())) == sorted(pts)
    for p in masks:
        for g in masks:
            ref = overlap_scores(p, g)
            assert (dice(p, g), iou(p, g), precision(p, g), recall(p, g)) == (
                ref["dice"], ref["iou"], ref["precision"], ref["recall"])
            hd, sd = surface_distances(p, g)
            assert abs(hausdorff(p, g) - hd) <= 1e-9
            assert abs(assd(p, g) - sd) <= 1e-9


def test_random_16x16_pairs_against_oracles_and_identities():
    rng = np.random.default_rng(16)
    for i in range(1000):
        dens = rng.uniform(0.05, 0.6, size=2)
        p = (rng.random((16, 16)) < dens[0]).astype(np.uint8)
        g = (rng.random((16, 16)) < dens[1]).astype(np.uint8)
        assert confusion(p, g) == counts(p, g)
        ref = overlap_scores(p, g)
        d, j, pr, rc = dice(p, g), iou(p, g), precision(p, g), recall(p, g)
        assert (d, j, pr, rc) == (ref["dice"], ref["iou"], ref["precision"], ref["recall"])
        hd, sd = surface_distances(p, g)
        assert abs(hausdorff(p, g) - hd) <= 1e-9
        assert abs(assd(p, g) - sd) <= 1e-9
        assert abs(d - 2 * j / (1 + j)) <= 1e-12
        if pr + rc > 0:
            assert abs(d - 2 * pr * rc / (pr + rc)) <= 1e-12


@settings(max_examples=150, deadline=None)
@given(mask_strategy, mask_strategy)
def test_symmetries_and_ordering(a, b):
    assert dice(a, b) == dice(b, a) and iou(a, b) == iou(b, a)
    assert hausdorff(a, b) == hausdorff(b, a)
    assert assd(a, b) == pytest.approx(assd(b, a), abs=1e-12)
    assert precision(a, b) == recall(b, a)
    if a.any() and b.any():
        assert assd(a, b) <= hausdorff(a, b) + 1e-12
    for v in (dice(a, b), iou(a, b), precision(a, b), recall(a, b)):
        assert 0.0 <= v <= 1.0


def test_evaluate_set_means_and_csv(tmp_path):
    gt = {"a": px((6, 6), (1, 1), (1, 2)), "b": px((6, 6), (3, 3)), "c": px((6, 6), (0, 0), (5, 5))}
    pred = {"a": gt["a"].copy(), "b": px((6, 6), (0, 3)), "c": px((6, 6), (0, 0))}
    rep = evaluate_set(pred, gt)
    assert rep.ids == ["a", "b", "c"]
    assert rep.rows[0] == {"dice": 1.0, "iou": 1.0, "hd": 0.0, "precision": 1.0, "recall": 1.0, "assd": 0.0}
    # hand-computed rows: b is disjoint at distance 3; c finds one of two isolated pixels
    assert rep.rows[1]["dice"] == 0.0 and rep.rows[1]["hd"] == 3.0
    assert rep.rows[2]["dice"] == pytest.approx(2 / 3) and rep.rows[2]["recall"] == 0.5
    assert rep.rows[2]["hd"] == pytest.approx(math.sqrt(50))
    assert rep.rows[2]["assd"] == pytest.approx(math.sqrt(50) / 3)
    assert rep.mean["dice"] == pytest.approx((1 + 0 + 2 / 3) / 3, abs=1e-12)
    assert rep.mean["hd"] == pytest.approx((0 + 3 + math.sqrt(50)) / 3, abs=1e-12)
    path = tmp_path / "metrics.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "id," + ",".join(FIELDS)
    assert lines[1] == "a,1.000000,1.000000,0.000000,1.000000,1.000000,0.000000"
    assert lines[-1].startswith("MEAN,0.555556,")
    back = read_metrics_csv(path)
    assert back.ids == rep.ids and back.mean["dice"] == 0.555556


def test_evaluate_set_errors():
    with pytest.raises(ValueError, match="empty"):
        evaluate_set({}, {})
    with pytest.raises(ValueError, match="ids differ"):
        evaluate_set({"a": np.zeros((2, 2))}, {"b": np.zeros((2, 2))})
