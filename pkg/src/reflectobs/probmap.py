"""Weight-decayed obstacle probability map and threshold segmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np
from PIL import Image

from .errors import ValidationError
from .proposals import Proposal

DEFAULT_TAU_B = 50


@dataclass
class ScoredProposal:
    proposal: Proposal
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")


def harmonic(n: int) -> float:
    return float(sum(1.0 / k for k in range(1, n + 1)))


def top_boxes(scored: Sequence[ScoredProposal], tau_b: int) -> List[ScoredProposal]:
    """Highest scores first, ties broken by the lower proposal id."""
    ranked = sorted(scored, key=lambda s: (-s.score, s.proposal.id))
    return ranked[:tau_b]


def build_map(scored: Sequence[ScoredProposal], tau_b: int, img_size) -> np.ndarray:
    """Per-pixel sum of ``score / rank`` over the covering top boxes.

    A pixel's rank for a box is its position among the boxes covering that
    pixel (1 = highest score). The sum is divided by the harmonic number
    ``H(tau_b)``, which bounds the map to [0, 1].

    Args:
        scored: scored proposals.
        tau_b: number of top boxes kept.
        img_size: ``(width, height)``.

    Returns:
        (height, width) float map.
    """
    if tau_b < 1:
        raise ValidationError("tau_b must be >= 1")
    width, height = img_size
    acc = np.zeros((height, width))
    cover = np.zeros((height, width), dtype=np.int64)
    for s in top_boxes(scored, tau_b):
        b = s.proposal
        u0, v0 = max(b.u, 0), max(b.v, 0)
        u1, v1 = min(b.u + b.w, width), min(b.v + b.h, height)
        if u1 <= u0 or v1 <= v0:
            continue
        c = cover[v0:v1, u0:u1]
        acc[v0:v1, u0:u1] += s.score / (c + 1)
        c += 1
    return acc / harmonic(tau_b)


def _iou(a: Proposal, b: Proposal) -> float:
    iw = min(a.u + a.w, b.u + b.w) - max(a.u, b.u)
    ih = min(a.v + a.h, b.v + b.h) - max(a.v, b.v)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def build_map_nms(scored: Sequence[ScoredProposal], img_size, iou_threshold: float = 0.5,
                  keep_fraction: float = 0.5) -> np.ndarray:
    """Baseline map: greedy NMS, keep the top half, take the per-pixel max score."""
    width, height = img_size
    kept: List[ScoredProposal] = []
    for s in top_boxes(scored, len(scored)):
        if all(_iou(s.proposal, k.proposal) <= iou_threshold for k in kept):
            kept.append(s)
    kept = kept[: max(1, int(np.ceil(len(kept) * keep_fraction)))] if kept else []
    out = np.zeros((height, width))
    for s in kept:
        b = s.proposal
        region = out[max(b.v, 0):b.v + b.h, max(b.u, 0):b.u + b.w]
        np.maximum(region, s.score, out=region)
    return out


def segment(prob: np.ndarray, threshold: float) -> np.ndarray:
    """Obstacle mask ``prob >= threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError("threshold must lie in [0, 1]")
    return np.asarray(prob) >= threshold


def save_map_png(path, prob: np.ndarray, tau_b: int, threshold=None, config_hash=None):
    """16-bit PNG of ``round(P * 65535)`` plus a ``.json`` sidecar."""
    path = Path(path)
    arr = np.clip(np.rint(np.asarray(prob) * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)
    side = {"tau_b": int(tau_b), "normalizer": harmonic(tau_b), "threshold": threshold}
    if config_hash:
        side["config_hash"] = config_hash
    path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=1))


def load_map_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 65535.0
