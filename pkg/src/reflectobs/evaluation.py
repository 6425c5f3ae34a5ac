"""Pixel ROC and instance-level detection metrics."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import EmptyGroundTruth, MaskMismatch

log = logging.getLogger(__name__)

EIGHT = np.ones((3, 3), dtype=int)


@dataclass
class PixelCounts:
    tp: int
    fp: int
    gt_obs: int
    gt_ground: int

    def __add__(self, other: "PixelCounts") -> "PixelCounts":
        return PixelCounts(self.tp + other.tp, self.fp + other.fp, self.gt_obs + other.gt_obs,
                           self.gt_ground + other.gt_ground)

    @property
    def tpr(self) -> float:
        return self.tp / self.gt_obs

    @property
    def fpr(self) -> float:
        return self.fp / self.gt_ground


@dataclass
class InstanceCounts:
    itp: int
    ifp: int
    n_obs: int
    n_img: int

    def __add__(self, other: "InstanceCounts") -> "InstanceCounts":
        return InstanceCounts(self.itp + other.itp, self.ifp + other.ifp,
                              self.n_obs + other.n_obs, self.n_img + other.n_img)

    @property
    def itpr(self) -> float:
        return self.itp / self.n_obs if self.n_obs else float("nan")

    @property
    def mifp(self) -> float:
        return self.ifp / self.n_img


def _check(mask, gt_floor, gt_obstacle):
    mask = np.asarray(mask, dtype=bool)
    floor = np.asarray(gt_floor, dtype=bool)
    obs = np.asarray(gt_obstacle)
    if not (mask.shape == floor.shape == obs.shape):
        raise MaskMismatch("prediction and ground-truth masks differ in size")
    return mask, floor, obs


def pixel_rates(mask, gt_floor, gt_obstacle) -> PixelCounts:
    """TP over obstacle pixels, FP over floor pixels only.

    Raises:
        EmptyGroundTruth: the frame has no obstacle or no floor pixels.
    """
    mask, floor, obs = _check(mask, gt_floor, gt_obstacle)
    obs = obs.astype(bool)
    gt_obs, gt_ground = int(obs.sum()), int(floor.sum())
    if gt_obs == 0 or gt_ground == 0:
        raise EmptyGroundTruth("frame lacks obstacle or floor pixels")
    return PixelCounts(int((mask & obs).sum()), int((mask & floor).sum()), gt_obs, gt_ground)


def instance_rates(mask, gt_floor, gt_instances) -> InstanceCounts:
    """iTP / iFP counts for one frame.

    A ground-truth instance is found when more than half of its pixels are
    predicted; a predicted 8-connected component is a false instance when
    more than half of it lies on floor.
    """
    mask, floor, inst = _check(mask, gt_floor, gt_instances)
    inst = inst.astype(np.int64)
    ids = np.unique(inst[inst > 0])
    if ids.size == 0 or not floor.any():
        raise EmptyGroundTruth("frame lacks obstacle or floor pixels")
    size = np.bincount(inst.ravel())
    hit = np.bincount(inst[mask].ravel(), minlength=size.size)
    itp = int(np.sum(2 * hit[ids] > size[ids]))
    comp, n = ndimage.label(mask, structure=EIGHT)
    csize = np.bincount(comp.ravel(), minlength=n + 1)
    con_floor = np.bincount(comp[floor].ravel(), minlength=n + 1)
    ifp = int(np.sum(2 * con_floor[1:] > csize[1:]))
    return InstanceCounts(itp, ifp, int(ids.size), 1)


def default_thresholds(n: int = 65535) -> np.ndarray:
    """``n + 1`` uniform thresholds; the default matches 16-bit map quantization."""
    return np.linspace(0.0, 1.0, n + 1)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    counts: List[PixelCounts]

    def operating_point(self, target_fpr: float = 0.02) -> Tuple[float, float, float]:
        """Threshold whose FPR is closest to ``target_fpr`` without exceeding it.

        Returns ``(threshold, fpr, tpr)``.
        """
        # FPR is non-increasing in the threshold, so the lowest admissible
        # threshold has the largest admissible FPR and the largest TPR
        ok = np.flatnonzero(self.fpr <= target_fpr + 1e-12)
        i = int(ok[0]) if ok.size else len(self.fpr) - 1
        return float(self.thresholds[i]), float(self.fpr[i]), float(self.tpr[i])

    def to_csv(self, path, config_hash: Optional[str] = None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def _frame_histograms(prob, floor, obs, thresholds):
    """Per-threshold counts of predicted obstacle and floor pixels (``P >= thr``)."""
    prob = np.asarray(prob, dtype=np.float64)
    idx_obs = np.searchsorted(thresholds, prob[obs], side="right")
    idx_floor = np.searchsorted(thresholds, prob[floor], side="right")
    n = len(thresholds)
    # a pixel with value p is predicted at threshold j iff thresholds[j] <= p,
    # i.e. j < idx; count pixels with idx > j
    c_obs = np.bincount(idx_obs, minlength=n + 1)
    c_floor = np.bincount(idx_floor, minlength=n + 1)
    tp = c_obs[::-1].cumsum()[::-1][1:]
    fp = c_floor[::-1].cumsum()[::-1][1:]
    return tp, fp


def roc(maps: Sequence[np.ndarray], gts: Sequence[Tuple[np.ndarray, np.ndarray]],
        thresholds: Optional[np.ndarray] = None) -> RocCurve:
    """Pixel ROC over the pooled pixels of all frames.

    ``gts`` holds ``(floor_mask, obstacle_mask)`` per frame. Frames without
    obstacle or floor pixels are skipped with a warning.
    """
    thr = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if thr.size < 2 or np.any(np.diff(thr) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    tp = np.zeros(thr.size, dtype=np.int64)
    fp = np.zeros(thr.size, dtype=np.int64)
    gt_obs = gt_ground = 0
    for i, (prob, (floor, obs)) in enumerate(zip(maps, gts)):
        floor = np.asarray(floor, dtype=bool)
        obs = np.asarray(obs).astype(bool)
        if np.shape(prob) != floor.shape or floor.shape != obs.shape:
            raise MaskMismatch("map and ground truth differ in size")
        if not obs.any() or not floor.any():
            log.warning("frame %d skipped: empty ground truth", i)
            continue
        a, b = _frame_histograms(prob, floor, obs, thr)
        tp += a
        fp += b
        gt_obs += int(obs.sum())
        gt_ground += int(floor.sum())
    if gt_obs == 0 or gt_ground == 0:
        raise EmptyGroundTruth("no frame with both obstacle and floor pixels")
    counts = [PixelCounts(int(a), int(b), gt_obs, gt_ground) for a, b in zip(tp, fp)]
    return RocCurve(thr, fp / gt_ground, tp / gt_obs, counts)


def summarize(masks: Iterable[np.ndarray], gts: Iterable[Tuple[np.ndarray, np.ndarray, np.ndarray]]):
    """Aggregate pixel and instance counts.

    ``gts`` yields ``(floor_mask, obstacle_mask, instance_ids)`` per frame.
    """
    pc, ic = None, None
    for mask, (floor, obs, inst) in zip(masks, gts):
        try:
            p = pixel_rates(mask, floor, obs)
            q = instance_rates(mask, floor, inst)
        except EmptyGroundTruth:
            log.warning("frame skipped: empty ground truth")
            continue
        pc = p if pc is None else pc + p
        ic = q if ic is None else ic + q
    if pc is None:
        raise EmptyGroundTruth("no frame with both obstacle and floor pixels")
    return pc, ic


def summary_json(pc: PixelCounts, ic: InstanceCounts, threshold: float, config_hash=None) -> str:
    d = {"itpr": ic.itpr, "mifp": ic.mifp, "tpr": pc.tpr, "fpr": pc.fpr, "threshold": threshold,
         "n_frames": ic.n_img, "n_obstacles": ic.n_obs}
    if config_hash:
        d["config_hash"] = config_hash
    return json.dumps(d, sort_keys=True, indent=1)


def split_labels(labels: np.ndarray):
    """Label image -> (floor mask, obstacle mask, instance ids)."""
    labels = np.asarray(labels)
    inst = np.where(labels >= 2, labels - 1, 0)
    return labels == 1, labels >= 2, inst
