"""Edge-map stand-in, top-response edge points and sliding-window proposals."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ValidationError


def detect_edges(img: np.ndarray, min_response: float = 0.0, percentile: float = 99.0) -> np.ndarray:
    """Gradient-magnitude edge proxy with responses in [0, 1].

    Sobel magnitude is divided by its ``percentile``-th value over the pixels
    with a nonzero gradient and clipped to 1. Responses below
    ``min_response`` are zeroed so faint texture does not count as edges.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        from .flow import to_gray
        img = to_gray(img)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    nz = mag[mag > 1e-12]
    if nz.size == 0:
        return np.zeros_like(img)
    scale = np.percentile(nz, percentile)
    resp = np.clip(mag / scale, 0.0, 1.0)
    resp[mag <= 1e-12] = 0.0
    if min_response > 0:
        resp[resp < min_response] = 0.0
    return resp


def load_edge_png(path) -> np.ndarray:
    """Injected edge map: 8-bit grayscale PNG, value / 255."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def save_edge_png(path, edges: np.ndarray, pnginfo=None):
    arr = np.clip(np.rint(np.asarray(edges) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, pnginfo=pnginfo)


@dataclass
class EdgePointSet:
    """Selected edge pixels: ``points`` is (N, 2) integer ``(u, v)``."""

    points: np.ndarray
    responses: np.ndarray
    shape: Tuple[int, int] = (0, 0)

    def __len__(self):
        return len(self.points)


def select_edge_points(edges: np.ndarray, tau_e: float = 0.8) -> EdgePointSet:
    """Keep the ``ceil(tau_e * #nonzero)`` strongest edge pixels.

    Ties at the cut-off go to the earlier pixel in row-major order; the
    returned points are in row-major order.
    """
    if not 0 < tau_e <= 1:
        raise ValidationError("tau_e must lie in (0, 1]")
    edges = np.asarray(edges, dtype=np.float64)
    flat = edges.ravel()
    nz = np.flatnonzero(flat > 0)
    keep = math.ceil(tau_e * nz.size - 1e-9)
    order = np.argsort(-flat[nz], kind="stable")[:keep]
    chosen = np.sort(nz[order])
    rows, cols = np.divmod(chosen, edges.shape[1])
    return EdgePointSet(np.column_stack([cols, rows]).astype(np.int64), flat[chosen].copy(),
                        edges.shape)


@dataclass
class Proposal:
    u: int
    v: int
    w: int
    h: int
    objectness: float = 0.0
    id: int = 0

    @property
    def area(self) -> int:
        return self.w * self.h

    def to_dict(self):
        return {"id": self.id, "u": self.u, "v": self.v, "w": self.w, "h": self.h,
                "objectness": self.objectness}


@dataclass(frozen=True)
class ProposalParams:
    scales: Tuple[int, ...] = (32, 64, 128, 256, 512)
    aspect_ratios: Tuple[float, ...] = (0.5, 1.0, 2.0)
    stride: int = 16
    top_j: int = 1000
    kappa: float = 1.5


def window_shapes(params: ProposalParams):
    shapes = []
    for s in params.scales:
        for a in params.aspect_ratios:
            w = int(round(s * math.sqrt(a)))
            h = int(round(s / math.sqrt(a)))
            if w >= 8 and h >= 8 and (w, h) not in shapes:
                shapes.append((w, h))
    return shapes


def response_image(edges: EdgePointSet, img_size) -> np.ndarray:
    width, height = img_size
    img = np.zeros((height, width))
    if len(edges):
        img[edges.points[:, 1], edges.points[:, 0]] = edges.responses
    return img


def score_windows(edges: EdgePointSet, img_size, params: ProposalParams):
    """All grid windows as (u, v, w, h, objectness) arrays.

    Objectness is the summed response strictly inside the window (its
    one-pixel border excluded) divided by ``(w h) ** kappa``.
    """
    width, height = img_size
    resp = response_image(edges, img_size)
    integral = np.zeros((height + 1, width + 1))
    integral[1:, 1:] = resp.cumsum(0).cumsum(1)
    us, vs, ws, hs, obj = [], [], [], [], []
    for w, h in window_shapes(params):
        if w > width or h > height:
            continue
        u = np.arange(0, width - w + 1, params.stride)
        v = np.arange(0, height - h + 1, params.stride)
        uu, vv = np.meshgrid(u, v)
        uu, vv = uu.ravel(), vv.ravel()
        x0, y0 = uu + 1, vv + 1
        x1, y1 = uu + w - 1, vv + h - 1
        inner = integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
        inner = np.maximum(inner, 0.0)
        us.append(uu)
        vs.append(vv)
        ws.append(np.full(uu.size, w))
        hs.append(np.full(uu.size, h))
        obj.append(inner / float(w * h) ** params.kappa)
    if not us:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, empty, np.zeros(0)
    return (np.concatenate(us), np.concatenate(vs), np.concatenate(ws), np.concatenate(hs),
            np.concatenate(obj))


def generate_proposals(edges: EdgePointSet, img_size, params: ProposalParams = ProposalParams()
                       ) -> List[Proposal]:
    """Top-J sliding windows by edge-density objectness.

    Ordering: objectness descending, then smaller area, then row-major
    position (v, then u), then narrower width.
    """
    if params.top_j < 1:
        raise ValidationError("J must be >= 1")
    u, v, w, h, obj = score_windows(edges, img_size, params)
    order = np.lexsort((w, u, v, w * h, -obj))[: params.top_j]
    return [Proposal(int(u[i]), int(v[i]), int(w[i]), int(h[i]), float(obj[i]), rank)
            for rank, i in enumerate(order)]


class SlidingWindowProposals:
    def __init__(self, params: ProposalParams = ProposalParams()):
        self.params = params

    def __call__(self, edges: EdgePointSet, img_size) -> List[Proposal]:
        return generate_proposals(edges, img_size, self.params)


def proposals_to_json(proposals: Sequence[Proposal]) -> str:
    return json.dumps([p.to_dict() for p in proposals], indent=1)


def load_proposals(path, img_size=None) -> List[Proposal]:
    """Injected proposals: JSON list of ``{u, v, w, h, objectness}``."""
    data = json.loads(Path(path).read_text())
    out = []
    for i, d in enumerate(data):
        p = Proposal(int(d["u"]), int(d["v"]), int(d["w"]), int(d["h"]),
                     float(d.get("objectness", 0.0)), int(d.get("id", i)))
        if img_size is not None:
            width, height = img_size
            if p.u < 0 or p.v < 0 or p.u + p.w > width or p.v + p.h > height or p.w < 1 or p.h < 1:
                raise ValidationError(f"injected proposal {i} lies outside the image")
        out.append(p)
    return out
