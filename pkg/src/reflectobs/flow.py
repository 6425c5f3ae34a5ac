"""Pyramidal Lucas-Kanade tracking and forward-backward error."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
from scipy import ndimage

from .errors import SizeMismatch, ValidationError

LUMA = np.array([0.299, 0.587, 0.114])
_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luminance of an RGB image in [0, 1]; grayscale input passes through."""
    img = np.asarray(rgb, dtype=np.float64)
    if img.ndim == 2:
        return img
    return np.clip(img[..., :3] @ LUMA, 0.0, 1.0)


def check_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError("grayscale image must be 2-D")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0 or img.max(initial=0.0) > 1:
        raise ValidationError("grayscale values must be finite and in [0, 1]")
    return img


@dataclass(frozen=True)
class LKParams:
    levels: int = 3
    window: int = 21
    max_iters: int = 30
    eps: float = 0.01
    min_eig: float = 1e-6

    @property
    def radius(self) -> int:
        return self.window // 2

    def max_displacement(self) -> float:
        """Upper bound on how far a point can move from its starting guess."""
        return self.radius * self.max_iters * (2 ** self.levels - 1) * np.sqrt(2)


def pyramid(img: np.ndarray, levels: int):
    out = [img]
    for _ in range(levels - 1):
        prev = out[-1]
        if min(prev.shape) < 2:
            break
        sm = ndimage.convolve1d(prev, _PYR_KERNEL, axis=0, mode="nearest")
        sm = ndimage.convolve1d(sm, _PYR_KERNEL, axis=1, mode="nearest")
        out.append(sm[::2, ::2])
    return out


def _gradients(img):
    p = np.pad(img, 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) * 0.5
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) * 0.5
    return gx, gy


def _windows(img, px, py, r):
    """Bilinear samples of the (2r+1)^2 window around each (px, py).

    All samples of one window share the same fractional offset, so a single
    integer gather plus four weighted views suffices. Borders clamp.
    """
    h, w = img.shape
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = (px - x0)[:, None, None]
    fy = (py - y0)[:, None, None]
    span = np.arange(-r, r + 2)
    cols = np.clip(x0.astype(np.int64)[:, None] + span, 0, w - 1)
    rows = np.clip(y0.astype(np.int64)[:, None] + span, 0, h - 1)
    patch = img[rows[:, :, None], cols[:, None, :]]
    top = patch[:, :-1, :-1] * (1 - fx) + patch[:, :-1, 1:] * fx
    bot = patch[:, 1:, :-1] * (1 - fx) + patch[:, 1:, 1:] * fx
    out = top * (1 - fy) + bot * fy
    return out.reshape(len(px), -1)


def track(target: np.ndarray, source: np.ndarray, points, params: LKParams = LKParams(),
          initial=None):
    """Track ``points`` of ``source`` into ``target``.

    Args:
        target: image the points are searched in.
        source: image the points come from.
        points: (N, 2) pixel coordinates in ``source``.
        params: pyramid / window / iteration settings.
        initial: optional (N, 2) starting guesses in ``target``.

    Returns:
        ``(positions, converged)``: (N, 2) float array and (N,) bool array. A
        point fails when its iterations run out at the finest level, it leaves
        the image, or its structure tensor is singular.
    """
    target = check_gray(target)
    source = check_gray(source)
    if target.shape != source.shape:
        raise SizeMismatch(f"image sizes differ: {target.shape} vs {source.shape}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return np.zeros((0, 2)), np.zeros(0, dtype=bool)

    pyr_s = pyramid(source, params.levels)
    pyr_t = pyramid(target, params.levels)
    levels = len(pyr_s)
    r = params.radius
    npix = (2 * r + 1) ** 2

    if initial is None:
        flow = np.zeros_like(pts)
    else:
        flow = np.asarray(initial, dtype=np.float64).reshape(-1, 2) - pts
    top = 2.0 ** (levels - 1)
    d = flow / top
    ok = np.ones(n, dtype=bool)
    done = np.zeros(n, dtype=bool)

    for level in range(levels - 1, -1, -1):
        scale = 2.0 ** level
        src, tgt = pyr_s[level], pyr_t[level]
        gx_img, gy_img = _gradients(src)
        p = pts / scale
        tmpl = _windows(src, p[:, 0], p[:, 1], r)
        gx = _windows(gx_img, p[:, 0], p[:, 1], r)
        gy = _windows(gy_img, p[:, 0], p[:, 1], r)
        gxx = (gx * gx).sum(1)
        gxy = (gx * gy).sum(1)
        gyy = (gy * gy).sum(1)
        det = gxx * gyy - gxy * gxy
        tr = gxx + gyy
        min_eig = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4 * det, 0.0))) / npix
        good = min_eig >= params.min_eig
        if level == 0:
            ok &= good
        active = good.copy()
        conv = np.zeros(n, dtype=bool)
        safe_det = np.where(good, det, 1.0)
        for _ in range(params.max_iters):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            warped = _windows(tgt, p[idx, 0] + d[idx, 0], p[idx, 1] + d[idx, 1], r)
            err = tmpl[idx] - warped
            bx = (err * gx[idx]).sum(1)
            by = (err * gy[idx]).sum(1)
            sd = safe_det[idx]
            ex = (gyy[idx] * bx - gxy[idx] * by) / sd
            ey = (gxx[idx] * by - gxy[idx] * bx) / sd
            step = np.hypot(ex, ey)
            clip = np.where(step > r, r / np.maximum(step, 1e-300), 1.0)
            ex *= clip
            ey *= clip
            d[idx, 0] += ex
            d[idx, 1] += ey
            fin = step * np.minimum(clip, 1.0) < params.eps
            conv[idx[fin]] = True
            active[idx[fin]] = False
        if level == 0:
            done = conv
        else:
            d *= 2.0

    out = pts + d
    h, w = source.shape
    inside = (out[:, 0] >= 0) & (out[:, 0] <= w - 1) & (out[:, 1] >= 0) & (out[:, 1] <= h - 1)
    converged = ok & done & inside & np.all(np.isfinite(out), axis=1)
    return out, converged


@dataclass
class TrackResult:
    """Per-point forward-backward tracking outcome (arrays over N points)."""

    x_t: np.ndarray
    a_prev: np.ndarray
    x_back: np.ndarray
    fb_error: np.ndarray
    track_ok: np.ndarray

    def __len__(self):
        return len(self.x_t)

    def to_json(self):
        return [
            {"x_t": [float(v) for v in self.x_t[i]], "a_prev": [float(v) for v in self.a_prev[i]],
             "x_back": [float(v) for v in self.x_back[i]], "track_ok": bool(self.track_ok[i])}
            for i in range(len(self))
        ]

    @classmethod
    def from_correspondences(cls, x_t, a_prev, x_back=None, track_ok=None):
        x_t = np.asarray(x_t, dtype=np.float64).reshape(-1, 2)
        a_prev = np.asarray(a_prev, dtype=np.float64).reshape(-1, 2)
        x_back = x_t.copy() if x_back is None else np.asarray(x_back, dtype=np.float64).reshape(-1, 2)
        ok = np.ones(len(x_t), dtype=bool) if track_ok is None else np.asarray(track_ok, dtype=bool)
        fb = np.where(ok, np.linalg.norm(x_t - x_back, axis=1), np.inf)
        return cls(x_t, a_prev, x_back, fb, ok)


def forward_backward(points, img_t, img_prev, params: LKParams = LKParams(),
                     initial_prev=None) -> TrackResult:
    """Track t -> t-1, then back t-1 -> t, and measure the round-trip error."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    a_prev, ok_f = track(img_prev, img_t, pts, params, initial=initial_prev)
    x_back, ok_b = track(img_t, img_prev, a_prev, params, initial=pts)
    ok = ok_f & ok_b
    fb = np.where(ok, np.linalg.norm(pts - x_back, axis=1), np.inf)
    return TrackResult(pts, a_prev, x_back, fb, ok)


class FlowProvider(Protocol):
    def __call__(self, points: np.ndarray, img_t: np.ndarray, img_prev: np.ndarray,
                 initial_prev: Optional[np.ndarray] = None) -> TrackResult: ...


class LKFlow:
    def __init__(self, params: LKParams = LKParams()):
        self.params = params

    def __call__(self, points, img_t, img_prev, initial_prev=None):
        return forward_backward(points, to_gray(img_t), to_gray(img_prev), self.params,
                                initial_prev=initial_prev)


class InjectedFlow:
    """Correspondences read from a JSON list of ``{x_t, a_prev, x_back, track_ok}``.

    Points are matched to the requested ones by rounded pixel position;
    requested points without an entry are reported as failed tracks.
    """

    def __init__(self, entries):
        self._table = {}
        for e in entries:
            key = (int(round(e["x_t"][0])), int(round(e["x_t"][1])))
            self._table[key] = e

    @classmethod
    def from_file(cls, path):
        return cls(json.loads(Path(path).read_text()))

    def __call__(self, points, img_t=None, img_prev=None, initial_prev=None):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        a = np.full_like(pts, np.nan)
        back = np.full_like(pts, np.nan)
        ok = np.zeros(len(pts), dtype=bool)
        for i, (u, v) in enumerate(pts):
            e = self._table.get((int(round(u)), int(round(v))))
            if e is None:
                continue
            a[i] = e["a_prev"]
            back[i] = e.get("x_back", e["x_t"])
            ok[i] = bool(e.get("track_ok", True))
        bad = ~np.all(np.isfinite(a), axis=1)
        a[bad] = pts[bad]
        back[bad] = pts[bad]
        ok &= ~bad
        fb = np.where(ok, np.linalg.norm(pts - back, axis=1), np.inf)
        return TrackResult(pts, a, back, fb, ok)


def params_to_dict(p: LKParams):
    return asdict(p)
