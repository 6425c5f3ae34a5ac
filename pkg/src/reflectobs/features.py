"""Appearance-geometry feature vectors for proposals.

Channel layout (1-based, as stored at index ``c - 1``):

====  ===========================================
1-4   edge cue: max, share of the modal response, mean, inner-box mean
5-10  pseudo-distance: normalized area, aspect, centre x/y, width, height
11    objectness
12-14 H, S, V standard deviations inside the box
15-17 H, S, V histogram contrast against the surrounding ring
18    mean homography error
19    mean deviation angle
====  ===========================================
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from matplotlib.colors import rgb_to_hsv as _mpl_rgb_to_hsv

from .flow import TrackResult
from .geometry import Homography, Parallax, ground_pixel_parallax
from .proposals import EdgePointSet, Proposal

N_CHANNELS = 19
N_APPEARANCE = 17
N_BINS = 18
FAILED_TRACK_LAMBDA = 100.0


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] -> HSV with H in degrees [0, 360), S and V in [0, 1]."""
    hsv = _mpl_rgb_to_hsv(np.clip(np.asarray(rgb, dtype=np.float64)[..., :3], 0.0, 1.0))
    hsv[..., 0] = np.mod(hsv[..., 0] * 360.0, 360.0)
    return hsv


def hsv_bins(hsv: np.ndarray) -> np.ndarray:
    """Per-pixel 18-bin histogram index for each of H, S, V."""
    b = np.empty(hsv.shape, dtype=np.int64)
    b[..., 0] = np.floor(hsv[..., 0] / (360.0 / N_BINS))
    b[..., 1] = np.floor(hsv[..., 1] * N_BINS)
    b[..., 2] = np.floor(hsv[..., 2] * N_BINS)
    return np.clip(b, 0, N_BINS - 1)


@dataclass
class GeoPointFeatures:
    """Per edge point: homography error, deviation angle, fb error (arrays)."""

    phi: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    g_prev: np.ndarray
    rho: Optional[np.ndarray] = None


def point_geometry(track: TrackResult, h_ground: Homography, gamma: int,
                   e_prev=None) -> GeoPointFeatures:
    """Ground-pixel parallax features of tracked points.

    ``g = H x_t`` is the floor transfer of each point, ``phi = |a - g|`` and
    ``theta = gamma * arcsin((a_y - g_y) / phi)`` (0 for ``phi < 1e-9``).
    Failed tracks carry a fixed forward-backward error of 100 px.
    """
    if gamma not in (1, -1):
        raise ValueError("gamma must be +1 or -1")
    g = h_ground.transfer(track.x_t)
    diff = track.a_prev - g
    phi = np.hypot(diff[:, 0], diff[:, 1])
    small = ~(phi >= 1e-9)
    ratio = np.divide(diff[:, 1], phi, out=np.zeros_like(phi), where=~small)
    theta = gamma * np.arcsin(np.clip(ratio, -1.0, 1.0))
    theta[small] = 0.0
    phi = np.where(np.isfinite(phi), phi, 0.0)
    lam = np.where(track.track_ok, track.fb_error, FAILED_TRACK_LAMBDA)
    rho = None
    if e_prev is not None:
        ge = g - np.asarray(e_prev, dtype=np.float64)
        norm2 = (ge ** 2).sum(1)
        rho = np.where(norm2 > 1e-18, (diff * ge).sum(1) / np.where(norm2 > 1e-18, norm2, 1.0),
                       np.nan)
    return GeoPointFeatures(phi, theta, lam, g, rho)


def _span(start: float, length: float, limit: int):
    """Pixel index range [lo, hi) of pixels whose index lies in [start, start+length)."""
    lo = max(int(math.ceil(start)), 0)
    hi = min(int(math.ceil(start + length)), limit)
    return lo, max(hi, lo)


def _cos_contrast(h1, h2) -> float:
    n1 = math.sqrt(float(h1 @ h1))
    n2 = math.sqrt(float(h2 @ h2))
    if n1 == 0 or n2 == 0:
        return 0.0
    return 1.0 - float(h1 @ h2) / (n1 * n2)


@dataclass
class FeatureSet:
    """Feature rows for a proposal list."""

    vectors: np.ndarray        # (J, 19)
    lambda_region: np.ndarray  # (J,)
    n_points: np.ndarray       # (J,)

    @property
    def appearance(self) -> np.ndarray:
        return self.vectors[:, :N_APPEARANCE]


class FeatureExtractor:
    """Per-frame precomputation shared by all proposals of that frame."""

    def __init__(self, edges: EdgePointSet, hsv: np.ndarray, geo: Optional[GeoPointFeatures]):
        self.hsv = np.asarray(hsv, dtype=np.float64)
        self.height, self.width = self.hsv.shape[:2]
        self.bins = hsv_bins(self.hsv)
        # integral histogram: counts of each (channel, bin) over [0, r) x [0, c)
        onehot = (self.bins[..., None] == np.arange(N_BINS)).astype(np.int32)
        self.cum = np.zeros((self.height + 1, self.width + 1, 3, N_BINS), dtype=np.int32)
        np.cumsum(np.cumsum(onehot, axis=0), axis=1, out=self.cum[1:, 1:])
        self.resp = np.asarray(edges.responses, dtype=np.float64)
        self.levels = np.floor(self.resp * 255.0 + 0.5).astype(np.int64)
        n = len(edges)
        if geo is None:
            geo = GeoPointFeatures(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros((n, 2)))
        self.phi = np.asarray(geo.phi, dtype=np.float64)
        self.theta = np.asarray(geo.theta, dtype=np.float64)
        self.lam = np.asarray(geo.lam, dtype=np.float64)
        self.index = np.full((self.height, self.width), -1, dtype=np.int64)
        if n:
            self.index[edges.points[:, 1], edges.points[:, 0]] = np.arange(n)

    def _points_in(self, x0, y0, w, h):
        c0, c1 = _span(x0, w, self.width)
        r0, r1 = _span(y0, h, self.height)
        sub = self.index[r0:r1, c0:c1]
        return sub[sub >= 0]

    def _hist(self, c0, c1, r0, r1):
        s = self.cum
        return (s[r1, c1] - s[r0, c1] - s[r1, c0] + s[r0, c0]).astype(np.int64)

    def box(self, b: Proposal):
        u, v, w, h = b.u, b.v, b.w, b.h
        f = np.zeros(N_CHANNELS)
        idx = self._points_in(u, v, w, h)
        n = idx.size
        lam_region = 0.0
        if n:
            r = self.resp[idx]
            f[0] = r.max()
            counts = np.bincount(self.levels[idx], minlength=256)
            f[1] = counts.max() / n
            f[2] = r.mean()
            inner = self._points_in(u + w / 4, v + h / 4, w / 2, h / 2)
            f[3] = self.resp[inner].mean() if inner.size else 0.0
            f[17] = self.phi[idx].mean()
            f[18] = self.theta[idx].mean()
            mean_lam = self.lam[idx].mean()
            lam_region = 1.0 / math.sqrt(mean_lam) if mean_lam > 0 else math.inf
        f[4] = (w * h) / (self.width * self.height)
        f[5] = w / h
        f[6] = u + w / 2
        f[7] = v + h / 2
        f[8] = w
        f[9] = h
        f[10] = b.objectness

        c0, c1 = _span(u, w, self.width)
        r0, r1 = _span(v, h, self.height)
        pix = self.hsv[r0:r1, c0:c1].reshape(-1, 3)
        f[11:14] = pix.std(axis=0)
        hist_in = self._hist(c0, c1, r0, r1)
        oc0, oc1 = _span(u - w / 4, 2 * w, self.width)
        or0, or1 = _span(v - h / 4, 2 * h, self.height)
        hist_ring = self._hist(oc0, oc1, or0, or1) - hist_in
        for ch in range(3):
            f[14 + ch] = _cos_contrast(hist_in[ch].astype(np.float64),
                                       hist_ring[ch].astype(np.float64))
        return f, lam_region, n


def extract_features(proposals: Sequence[Proposal], edges: EdgePointSet, hsv: np.ndarray,
                     geo: Optional[GeoPointFeatures] = None) -> FeatureSet:
    """19-channel vector, region confidence and edge-point count per proposal.

    The surrounding ring for the colour contrasts is the box
    ``(u - w/4, v - h/4, 2w, 2h)`` clipped to the image, minus the proposal
    itself. Boxes without edge points get zero edge and parallax channels and
    zero confidence.
    """
    ex = FeatureExtractor(edges, hsv, geo)
    j = len(proposals)
    vec = np.zeros((j, N_CHANNELS))
    lam = np.zeros(j)
    cnt = np.zeros(j, dtype=np.int64)
    for i, b in enumerate(proposals):
        vec[i], lam[i], cnt[i] = ex.box(b)
    return FeatureSet(vec, lam, cnt)


CSV_HEADER = ["id"] + [f"f{i}" for i in range(1, N_CHANNELS + 1)] + [
    "lambda", "n_points", "label_iou", "class"]


def write_feature_csv(path_or_file, ids, features: np.ndarray, lambda_region, n_points,
                      label_iou, classes, config_hash: Optional[str] = None):
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        fh = open(path_or_file, "w", newline="", encoding="utf-8")
        close = True
    else:
        fh = path_or_file
    try:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(ids)):
            w.writerow([ids[i]] + [repr(float(x)) for x in features[i]] +
                       [repr(float(lambda_region[i])), int(n_points[i]),
                        repr(float(label_iou[i])), classes[i]])
    finally:
        if close:
            fh.close()


def read_feature_csv(path):
    """Returns ``(ids, X (N,19), lambda, n_points, label_iou, classes)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(io.StringIO("".join(rows)))
    ids, x, lam, npt, lab, cls = [], [], [], [], [], []
    for row in reader:
        ids.append(row["id"])
        x.append([float(row[f"f{i}"]) for i in range(1, N_CHANNELS + 1)])
        lam.append(float(row["lambda"]))
        npt.append(int(row["n_points"]))
        lab.append(float(row["label_iou"]))
        cls.append(row["class"])
    return (ids, np.array(x).reshape(-1, N_CHANNELS), np.array(lam), np.array(npt),
            np.array(lab), cls)
