import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reflectobs.errors import EmptyGroundTruth, MaskMismatch
from reflectobs.evaluation import (InstanceCounts, PixelCounts, default_thresholds, instance_rates,
                                   pixel_rates, roc, split_labels, summarize, summary_json)

from oracles import naive_instance_counts, naive_pixel_counts


def random_layout(rng, h=24, w=32):
    """Label image with floor, background and a few blob-shaped instances."""
    labels = np.ones((h, w), dtype=np.int64)
    labels[: rng.integers(0, h // 3)] = 0
    for k in range(int(rng.integers(1, 5))):
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        ry, rx = rng.integers(1, 6, 2)
        yy, xx = np.ogrid[:h, :w]
        labels[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1] = k + 2
    return labels


def random_mask(rng, labels):
    kind = rng.integers(3)
    if kind == 0:
        return rng.uniform(size=labels.shape) < rng.uniform(0.05, 0.6)
    if kind == 1:
        m = (labels >= 2) & (rng.uniform(size=labels.shape) < 0.8)
        return m | (rng.uniform(size=labels.shape) < 0.03)
    m = np.zeros(labels.shape, dtype=bool)
    for _ in range(4):
        y, x = rng.integers(0, labels.shape[0] - 4), rng.integers(0, labels.shape[1] - 4)
        m[y:y + rng.integers(1, 8), x:x + rng.integers(1, 8)] = True
    return m


def test_counters_match_naive_oracles():
    rng = np.random.default_rng(77)
    checked = 0
    while checked < 200:
        labels = random_layout(rng)
        floor, obs, inst = split_labels(labels)
        if not obs.any() or not floor.any():
            continue
        mask = random_mask(rng, labels)
        pc = pixel_rates(mask, floor, obs)
        ic = instance_rates(mask, floor, inst)
        assert (pc.tp, pc.fp, pc.gt_obs, pc.gt_ground) == naive_pixel_counts(mask, floor, obs)
        assert (ic.itp, ic.ifp, ic.n_obs) == naive_instance_counts(mask, floor, inst)
        checked += 1


def test_perfect_mask():
    labels = random_layout(np.random.default_rng(1))
    floor, obs, inst = split_labels(labels)
    pc, ic = pixel_rates(obs, floor, obs), instance_rates(obs, floor, inst)
    assert pc.tpr == 1.0 and pc.fpr == 0.0
    assert ic.itpr == 1.0 and ic.mifp == 0.0


def test_rates_arithmetic():
    assert PixelCounts(50, 3, 100, 300).tpr == 0.5
    assert PixelCounts(50, 3, 100, 300).fpr == 0.01
    total = sum([InstanceCounts(0, 1, 1, 1)] * 9, InstanceCounts(0, 1, 1, 1))
    assert total.mifp == 1.0 and total.n_img == 10


def test_spurious_blob_each_frame():
    labels = np.ones((10, 10), dtype=np.int64)
    labels[0:2, 0:2] = 2
    floor, obs, inst = split_labels(labels)
    blob = np.zeros((10, 10), dtype=bool)
    blob[6:9, 6:9] = True
    masks = [blob] * 10
    pc, ic = summarize(masks, [(floor, obs, inst)] * 10)
    assert ic.mifp == 1.0 and ic.itpr == 0.0 and pc.fp == 90


def test_background_pixels_are_not_false_positives():
    labels = np.zeros((6, 6), dtype=np.int64)
    labels[3:] = 1
    labels[4, 4] = 2
    floor, obs, inst = split_labels(labels)
    mask = labels == 0
    assert pixel_rates(mask, floor, obs).fp == 0
    assert instance_rates(mask, floor, inst).ifp == 0


def test_diagonal_pixels_form_one_component():
    labels = np.ones((5, 5), dtype=np.int64)
    labels[0, 4] = 2
    floor, _, inst = split_labels(labels)
    mask = np.eye(5, dtype=bool)
    assert instance_rates(mask, floor, inst).ifp == 1


def test_exactly_half_is_not_enough():
    labels = np.ones((4, 4), dtype=np.int64)
    labels[0, 0:2] = 2
    floor, _, inst = split_labels(labels)
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 0] = True
    assert instance_rates(mask, floor, inst).itp == 0
    mask[1, 0] = True  # component: one obstacle, one floor pixel
    assert instance_rates(mask, floor, inst).ifp == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_instance_id_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    labels = random_layout(rng)
    floor, obs, inst = split_labels(labels)
    if not obs.any() or not floor.any():
        return
    mask = random_mask(rng, labels)
    ids = np.unique(inst[inst > 0])
    relabel = dict(zip(ids, rng.permutation(ids) * 7 + 3))
    inst2 = np.vectorize(lambda v: relabel.get(v, 0))(inst)
    assert instance_rates(mask, floor, inst) == instance_rates(mask, floor, inst2)


def test_errors():
    with pytest.raises(MaskMismatch):
        pixel_rates(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(EmptyGroundTruth):
        pixel_rates(np.zeros((2, 2)), np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(EmptyGroundTruth):
        instance_rates(np.zeros((2, 2)), np.zeros((2, 2), bool), np.ones((2, 2)))


def test_summarize_skips_empty_frames():
    labels = random_layout(np.random.default_rng(3))
    floor, obs, inst = split_labels(labels)
    empty = (np.ones_like(floor), np.zeros_like(obs), np.zeros_like(inst))
    pc, ic = summarize([obs, obs], [(floor, obs, inst), empty])
    assert ic.n_img == 1 and pc.tpr == 1.0


# -- ROC ----------------------------------------------------------------------


def _frames(seed, n=4):
    rng = np.random.default_rng(seed)
    maps, gts = [], []
    for _ in range(n):
        labels = random_layout(rng)
        floor, obs, _ = split_labels(labels)
        if not obs.any():
            continue
        p = np.clip(rng.uniform(size=labels.shape) * 0.6 + 0.4 * obs, 0, 1)
        maps.append(np.round(p * 255) / 255)
        gts.append((floor, obs))
    return maps, gts


def test_roc_matches_direct_thresholding():
    maps, gts = _frames(4)
    thr = np.linspace(0, 1, 257)
    curve = roc(maps, gts, thr)
    for j in range(0, 257, 16):
        tp = sum(int(((m >= thr[j]) & o).sum()) for m, (f, o) in zip(maps, gts))
        fp = sum(int(((m >= thr[j]) & f).sum()) for m, (f, o) in zip(maps, gts))
        assert (curve.counts[j].tp, curve.counts[j].fp) == (tp, fp)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_roc_monotone(seed):
    maps, gts = _frames(seed)
    if not maps:
        return
    curve = roc(maps, gts, np.linspace(0, 1, 300))
    assert np.all(np.diff(curve.fpr) <= 0) and np.all(np.diff(curve.tpr) <= 0)
    # walking the thresholds downwards, FPR and TPR rise together
    fpr, tpr = curve.fpr[::-1], curve.tpr[::-1]
    assert np.all((np.diff(fpr) >= 0) & (np.diff(tpr) >= 0))


def test_roc_frame_order_irrelevant():
    maps, gts = _frames(5)
    a, b = roc(maps, gts, np.linspace(0, 1, 256)), roc(maps[::-1], gts[::-1], np.linspace(0, 1, 256))
    assert np.array_equal(a.tpr, b.tpr) and np.array_equal(a.fpr, b.fpr)


def test_indicator_map_passes_through_corner():
    labels = random_layout(np.random.default_rng(8))
    floor, obs, _ = split_labels(labels)
    curve = roc([obs.astype(float)], [(floor, obs)], np.linspace(0, 1, 256))
    assert any(f == 0.0 and t == 1.0 for f, t in zip(curve.fpr, curve.tpr))


def test_constant_map_two_regions():
    labels = random_layout(np.random.default_rng(9))
    floor, obs, _ = split_labels(labels)
    thr = np.linspace(0, 1, 256)
    curve = roc([np.full(floor.shape, 0.5)], [(floor, obs)], thr)
    assert np.all(curve.tpr[thr <= 0.5] == 1) and np.all(curve.fpr[thr <= 0.5] == 1)
    assert np.all(curve.tpr[thr > 0.5] == 0) and np.all(curve.fpr[thr > 0.5] == 0)


def test_operating_point_from_below():
    maps, gts = _frames(6)
    curve = roc(maps, gts, np.linspace(0, 1, 1001))
    thr, fpr, tpr = curve.operating_point(0.02)
    assert fpr <= 0.02
    i = int(np.flatnonzero(curve.thresholds == thr)[0])
    assert i == 0 or curve.fpr[i - 1] > 0.02


def test_default_thresholds():
    t = default_thresholds()
    assert t.size == 65536 and t[0] == 0 and t[-1] == 1


def test_roc_rejects_bad_thresholds():
    maps, gts = _frames(1)
    with pytest.raises(ValueError):
        roc(maps, gts, np.array([0.5, 0.2]))


def test_csv_and_summary(tmp_path):
    maps, gts = _frames(2)
    curve = roc(maps, gts, np.linspace(0, 1, 256))
    curve.to_csv(tmp_path / "roc.csv", config_hash="h1")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=h1" and lines[1] == "threshold,fpr,tpr" and len(lines) == 258
    s = summary_json(PixelCounts(1, 2, 4, 8), InstanceCounts(1, 0, 2, 1), 0.3, "h1")
    assert '"config_hash": "h1"' in s and '"itpr": 0.5' in s
