"""IoU regression forests (AGR / AR), training labels and confidence gating."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, InsufficientData, MaskMismatch, ValidationError
from .features import N_APPEARANCE, N_CHANNELS
from .proposals import Proposal

FLOOR_CLASS = "floor"
BACKGROUND_CLASS = "background"


# --------------------------------------------------------------------------
# Training labels


@dataclass
class TrainingSample:
    proposal_id: int
    label_iou: float
    klass: str


def _as_instances(obstacle_mask):
    m = np.asarray(obstacle_mask)
    if m.dtype == bool:
        labels, _ = ndimage.label(m, structure=np.ones((3, 3), dtype=int))
        return labels
    return m.astype(np.int64)


def label_samples(proposals: Sequence[Proposal], floor_mask, obstacle_mask,
                  floor_fraction: float = 0.4, only_floor: bool = False) -> List[TrainingSample]:
    """Class and IoU label for each proposal.

    A proposal is ``floor`` when more than ``floor_fraction`` of its pixels
    are floor or obstacle, else ``background``. Its label is the IoU between
    the box and the union of the obstacle instances that overlap it.

    Args:
        floor_mask: bool (H, W).
        obstacle_mask: instance ids (0 = none) or a bool mask, whose
            8-connected components are then taken as instances.
        only_floor: drop background samples (the training set).
    """
    floor = np.asarray(floor_mask, dtype=bool)
    inst = _as_instances(obstacle_mask)
    if floor.shape != inst.shape:
        raise MaskMismatch(f"mask sizes differ: {floor.shape} vs {inst.shape}")
    if np.any(floor & (inst > 0)):
        raise MaskMismatch("floor and obstacle masks overlap")
    n_inst = int(inst.max(initial=0))
    sizes = np.bincount(inst.ravel(), minlength=n_inst + 1)
    occupied = floor | (inst > 0)
    out = []
    for p in proposals:
        win_occ = occupied[p.v:p.v + p.h, p.u:p.u + p.w]
        win_inst = inst[p.v:p.v + p.h, p.u:p.u + p.w]
        area = p.w * p.h
        klass = FLOOR_CLASS if win_occ.sum() / area > floor_fraction else BACKGROUND_CLASS
        inside = np.bincount(win_inst.ravel(), minlength=n_inst + 1)
        inside[0] = 0
        touched = np.flatnonzero(inside)
        inter = int(inside.sum())
        union = area + int(sizes[touched].sum()) - inter
        iou = inter / union if union else 0.0
        if only_floor and klass != FLOOR_CLASS:
            continue
        out.append(TrainingSample(p.id, float(iou), klass))
    return out


# --------------------------------------------------------------------------
# Trees


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 50
    max_depth: int = 20
    min_leaf: int = 5
    feature_subsample: Union[str, int, None] = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def n_features(self, dim: int) -> int:
        if self.feature_subsample is None or self.feature_subsample == "all":
            return dim
        if self.feature_subsample == "sqrt":
            return max(1, math.ceil(math.sqrt(dim)))
        return max(1, min(dim, int(self.feature_subsample)))


@dataclass
class RegressionTree:
    """Flattened binary tree; leaves have ``feature == -1``.

    Samples with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return node
            i = rows[internal]
            n = node[internal]
            go_left = x[i, f[internal]] <= self.threshold[n]
            node[internal] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]

    def to_dict(self):
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist(), "count": self.count.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature"], dtype=np.int64),
                   np.array(d["threshold"], dtype=np.float64),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=np.float64), np.array(d["count"], dtype=np.int64))


def _best_split(x: np.ndarray, y: np.ndarray, features, min_leaf: int):
    """Best variance-reducing split over ``features``; None if none is valid."""
    n = len(y)
    best = None
    pos = np.arange(min_leaf, n - min_leaf + 1)
    if pos.size == 0:
        return None
    for f in features:
        col = x[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        ys = y[order]
        valid = xs[pos - 1] < xs[pos]
        if not valid.any():
            continue
        csum = np.cumsum(ys)
        total = csum[-1]
        nl = pos.astype(np.float64)
        nr = n - nl
        mean_l = csum[pos - 1] / nl
        mean_r = (total - csum[pos - 1]) / nr
        gain = nl * nr / n * (mean_l - mean_r) ** 2
        gain = np.where(valid, gain, -1.0)
        k = int(np.argmax(gain))
        if best is None or gain[k] > best[0]:
            i = pos[k]
            lo, hi = xs[i - 1], xs[i]
            thr = 0.5 * (lo + hi)
            if not lo <= thr < hi:
                thr = lo
            best = (float(gain[k]), int(f), float(thr))
    return best


def _grow_tree(x: np.ndarray, y: np.ndarray, config: ForestConfig, rng: np.random.Generator
               ) -> RegressionTree:
    dim = x.shape[1]
    m = config.n_features(dim)
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        count.append(0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        count[node] = int(idx.size)
        if ys.max() == ys.min():
            value[node] = float(ys[0])
            continue
        value[node] = float(ys.mean())
        if (config.max_depth is not None and depth >= config.max_depth) or \
                idx.size < 2 * config.min_leaf:
            continue
        perm = rng.permutation(dim)
        split = _best_split(x[idx], ys, perm[:m], config.min_leaf)
        if split is None and m < dim:
            split = _best_split(x[idx], ys, perm[m:], config.min_leaf)
        if split is None:
            continue
        _, f, thr = split
        go_left = x[idx, f] <= thr
        li, ri = new_node(), new_node()
        feature[node] = f
        threshold[node] = thr
        left[node] = li
        right[node] = ri
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))

    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                          np.clip(np.array(value), 0.0, 1.0), np.array(count, dtype=np.int64))


@dataclass
class RegressionForest:
    trees: List[RegressionTree]
    dimensionality: int
    seed: int
    config: ForestConfig = field(default_factory=ForestConfig)

    def predict(self, x) -> np.ndarray:
        return predict(self, x)

    def to_dict(self):
        return {"dimensionality": self.dimensionality, "seed": self.seed,
                "config": asdict(self.config), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        cfg = ForestConfig(**d.get("config", {}))
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], int(d["dimensionality"]),
                   int(d["seed"]), cfg)

    def save(self, path, config_hash: Optional[str] = None):
        d = self.to_dict()
        if config_hash:
            d["config_hash"] = config_hash
        Path(path).write_text(json.dumps(d, sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def leaf_value_range(self):
        leaves = np.concatenate([t.value[t.feature < 0] for t in self.trees])
        return float(leaves.min()), float(leaves.max())


def _canonical_order(x, y):
    keys = [y] + [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def train(x, y, config: ForestConfig = ForestConfig()) -> RegressionForest:
    """Fit a regression forest of IoU labels.

    Samples are put into a canonical (lexicographic) order first, so the
    result depends only on the sample multiset and the seed. Each tree sees a
    bootstrap resample (if enabled) and considers ``ceil(sqrt(dim))`` random
    channels per node, falling back to the other channels when none of them
    admits a split.

    Raises:
        InsufficientData: fewer than ``min_leaf`` samples.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise DimensionMismatch("features must be (N, D) with N labels")
    if len(y) < max(config.min_leaf, 1):
        raise InsufficientData(f"need at least {config.min_leaf} samples, got {len(y)}")
    if config.n_trees < 1:
        raise ValidationError("n_trees must be >= 1")
    if not np.all(np.isfinite(x)):
        raise ValidationError("features must be finite")
    order = _canonical_order(x, y)
    x, y = x[order], y[order]
    children = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = []
    n = len(y)
    for child in children:
        rng = np.random.default_rng(child)
        if config.bootstrap:
            idx = np.sort(rng.integers(0, n, n))
            xb, yb = x[idx], y[idx]
        else:
            xb, yb = x, y
        trees.append(_grow_tree(xb, yb, config, rng))
    return RegressionForest(trees, x.shape[1], config.seed, config)


def predict(forest: RegressionForest, x) -> np.ndarray:
    """Mean leaf value over trees; accepts one vector or a (N, D) matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.shape[1] != forest.dimensionality:
        raise DimensionMismatch(
            f"forest expects {forest.dimensionality} channels, got {x2.shape[1]}")
    total = np.zeros(len(x2))
    lo = np.full(len(x2), np.inf)
    hi = np.full(len(x2), -np.inf)
    for t in forest.trees:
        v = t.predict(x2)
        total += v
        np.minimum(lo, v, out=lo)
        np.maximum(hi, v, out=hi)
    # rounding in the sum must not push the mean outside the tree values
    out = np.clip(total / len(forest.trees), lo, hi)
    return out[0] if single else out


# --------------------------------------------------------------------------
# Fusion

GEOMETRY_WHEN_CONFIDENT = "geometry_when_confident"
AS_PRINTED = "as_printed"


def agfm_predict(agr: RegressionForest, ar: RegressionForest, features, lambda_region,
                 tau_gc: float = 0.1, gating: str = GEOMETRY_WHEN_CONFIDENT):
    """Confidence-gated fusion of the two regressors.

    With the default gating the 19-channel regressor scores boxes whose
    region confidence is at least ``tau_gc`` and the appearance-only one
    scores the rest. ``gating="as_printed"`` swaps the branches.
    """
    if agr.dimensionality != N_CHANNELS or ar.dimensionality != N_APPEARANCE:
        raise DimensionMismatch("expected a 19-channel AGR and a 17-channel AR")
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(-1, N_CHANNELS)
    lam = np.asarray(lambda_region, dtype=np.float64).reshape(-1)
    if gating == GEOMETRY_WHEN_CONFIDENT:
        use_geo = lam >= tau_gc
    elif gating == AS_PRINTED:
        use_geo = lam < tau_gc
    else:
        raise ValidationError(f"unknown gating mode {gating!r}")
    out = np.empty(len(x))
    if use_geo.any():
        out[use_geo] = predict(agr, x[use_geo])
    if (~use_geo).any():
        out[~use_geo] = predict(ar, x[~use_geo, :N_APPEARANCE])
    return out[0] if single else out
