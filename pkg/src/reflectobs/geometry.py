"""Camera, pose and ground-plane algebra.

Conventions used throughout the package:

* pixels are ``(u, v)`` = (column, row) with pixel centres at integer
  coordinates;
* a pose stores ``r`` (world -> camera rotation) and ``c`` (camera centre in
  world coordinates), so a world point ``X`` projects to ``K r (X - c)``;
* camera axes are x right, y down, z forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegenerateMotion,
    EpipoleCoincidesWithPoint,
    NoPhysicalSolution,
    ValidationError,
)


def _frozen_array(a, shape=None):
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ValidationError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Pose:
    """Camera pose: ``r`` rotates world to camera, ``c`` is the centre."""

    r: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        r = _frozen_array(self.r, (3, 3))
        c = _frozen_array(self.c, (3,))
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValidationError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "c", c)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.c) @ self.r.T

    def project(self, points: np.ndarray, k: CameraIntrinsics):
        """Project world points (N, 3) -> pixels (N, 2) and depths (N,)."""
        xc = self.to_camera(points)
        hom = xc @ k.matrix.T
        return hom[..., :2] / hom[..., 2:3], xc[..., 2]

    @property
    def optical_axis(self) -> np.ndarray:
        return self.r[2].copy()


@dataclass(frozen=True)
class GroundPlane:
    """Floor normal ``n`` (world frame, pointing toward the camera side) and
    the perpendicular camera height ``d`` in metres."""

    n: np.ndarray
    d: float

    def __post_init__(self):
        n = _frozen_array(self.n, (3,))
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValidationError("ground normal must be a unit vector")
        if not self.d > 0:
            raise ValidationError("camera height must be positive")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", float(self.d))

    @classmethod
    def from_normal(cls, n, d):
        n = np.asarray(n, dtype=np.float64)
        return cls(n / np.linalg.norm(n), d)

    def to_dict(self):
        return {"normal": [float(x) for x in self.n], "height_m": self.d}

    @classmethod
    def from_dict(cls, d):
        return cls.from_normal(d["normal"], float(d["height_m"]))


def normalize_homography_matrix(m: np.ndarray) -> np.ndarray:
    m = np.array(m, dtype=np.float64)
    norm = np.linalg.norm(m)
    if not np.isfinite(norm) or norm == 0:
        raise DegenerateConfiguration("homography is zero or non-finite")
    m = m / norm
    if m[2, 2] < 0:
        m = -m
    elif m[2, 2] == 0:
        flat = m.ravel()
        first = flat[np.flatnonzero(flat)[0]]
        if first < 0:
            m = -m
    return m


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, stored with unit Frobenius norm and h[2,2] >= 0."""

    h: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.h, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValidationError("homography must be 3x3")
        m = normalize_homography_matrix(m)
        s = np.linalg.svd(m, compute_uv=False)
        if s[2] <= s[0] * 1e-12:
            raise DegenerateConfiguration("homography is rank deficient")
        object.__setattr__(self, "h", _frozen_array(m))

    def transfer(self, points) -> np.ndarray:
        """Map pixels (..., 2) through the homography."""
        p = np.asarray(points, dtype=np.float64)
        hom = p @ self.h[:, :2].T + self.h[:, 2]
        return hom[..., :2] / hom[..., 2:3]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def equals(self, other: "Homography", tol=1e-9) -> bool:
        return bool(np.linalg.norm(self.h - other.h) <= tol)


# --------------------------------------------------------------------------
# Homography estimation


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    mean_dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if mean_dist == 0:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]],
                     [0.0, s, -s * centroid[1]],
                     [0.0, 0.0, 1.0]])


def estimate_homography_dlt(src, dst) -> Homography:
    """Normalized DLT: find H with dst ~ H src from >= 4 correspondences.

    Raises:
        DegenerateConfiguration: fewer than 4 pairs, rank-deficient design
            matrix, or a singular solution (e.g. three collinear sources).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValidationError("source and destination counts differ")
    if len(src) < 4:
        raise DegenerateConfiguration("at least 4 correspondences are required")

    t_src = _normalizing_transform(src)
    t_dst = _normalizing_transform(dst)
    xs = src @ t_src[:2, :2].T + t_src[:2, 2]
    xd = dst @ t_dst[:2, :2].T + t_dst[:2, 2]

    n = len(xs)
    a = np.zeros((2 * n, 9))
    x, y = xs[:, 0], xs[:, 1]
    u, v = xd[:, 0], xd[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v

    _, s, vt = np.linalg.svd(a)
    if s[7] <= s[0] * 1e-10:
        raise DegenerateConfiguration("design matrix has rank < 8")
    hn = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(t_dst) @ hn @ t_src)


def transfer_residuals(h: Homography, src, dst) -> np.ndarray:
    return np.linalg.norm(h.transfer(src) - np.asarray(dst, dtype=np.float64), axis=-1)


# --------------------------------------------------------------------------
# Decomposition


@dataclass(frozen=True)
class PlaneMotion:
    """One analytic decomposition ``H_e = R + T N^T`` of a calibrated
    homography. ``normal`` points from the first camera toward the plane and
    ``translation`` is the translation scaled by the inverse plane distance."""

    rotation: np.ndarray
    translation: np.ndarray
    normal: np.ndarray

    @property
    def translation_direction(self) -> np.ndarray:
        return self.translation / np.linalg.norm(self.translation)


def _skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def _rotation_from_frames(w, u):
    # nearest rotation; removes rounding drift from the column construction
    m = w @ u.T
    a, _, bt = np.linalg.svd(m)
    r = a @ bt
    if np.linalg.det(r) < 0:
        a[:, -1] *= -1
        r = a @ bt
    return r


def decompose_homography(h: Homography, k: CameraIntrinsics, points=None,
                         degenerate_tol: float = 1e-8) -> List[PlaneMotion]:
    """Analytic plane-homography decomposition with a cheirality filter.

    Four candidates are built from the SVD of ``H_e^T H_e`` where
    ``H_e = K^-1 H K`` is scaled to unit middle singular value. A candidate
    survives when the plane lies in front of the first camera for every
    observed ray (``points``, pixels in the first image; the principal ray
    when omitted) and, if points are given, those plane points are also in
    front of the second camera.

    Raises:
        NoPhysicalSolution: no candidate survives, or the motion is a pure
            rotation / no motion (``degenerate_motion`` set), in which case the
            plane normal is undetermined.
    """
    he = k.inverse @ h.h @ k.matrix
    sv = np.linalg.svd(he, compute_uv=False)
    he = he / sv[1]
    if np.linalg.det(he) < 0:
        he = -he

    _, s, vt = np.linalg.svd(he.T @ he)
    v = vt.T
    if np.linalg.det(v) < 0:
        v = -v
    s1, s3 = s[0], s[2]
    if s1 - s3 < degenerate_tol:
        raise NoPhysicalSolution(
            "homography is a pure rotation; plane normal undetermined",
            degenerate_motion=True)

    v1, v2, v3 = v[:, 0], v[:, 1], v[:, 2]
    den = math.sqrt(s1 - s3)
    a = math.sqrt(max(1.0 - s3, 0.0)) / den
    b = math.sqrt(max(s1 - 1.0, 0.0)) / den
    candidates = []
    for sign in (1.0, -1.0):
        u1 = a * v1 + sign * b * v3
        n = np.cross(v2, u1)
        u_frame = np.column_stack([v2, u1, n])
        hv2, hu1 = he @ v2, he @ u1
        w_frame = np.column_stack([hv2, hu1, np.cross(hv2, hu1)])
        r = _rotation_from_frames(w_frame, u_frame)
        t = (he - r) @ n
        candidates.append(PlaneMotion(r, t, n))
        candidates.append(PlaneMotion(r, -t, -n))

    if points is None:
        rays = np.array([[0.0, 0.0, 1.0]])
    else:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        rays = np.column_stack([pts, np.ones(len(pts))]) @ k.inverse.T

    out = []
    for cand in candidates:
        proj = rays @ cand.normal
        if np.any(proj <= 0):
            continue
        if points is not None:
            # plane points at unit plane distance
            x1 = rays / proj[:, None]
            x2 = x1 @ cand.rotation.T + cand.translation
            if np.any(x2[:, 2] <= 0):
                continue
        out.append(cand)
    if not out:
        raise NoPhysicalSolution("no decomposition passes the cheirality test")
    return out


def compose_homography(rotation, translation, normal, distance, k: CameraIntrinsics) -> Homography:
    """Plane-induced homography for ``x2 = R x1 + t`` and plane ``N^T x1 = d``."""
    he = np.asarray(rotation) + np.outer(translation, normal) / distance
    return Homography(k.matrix @ he @ k.inverse)


# --------------------------------------------------------------------------
# Calibration


@dataclass(frozen=True)
class CalibrationReport:
    ground: GroundPlane
    homography: Homography
    per_pair_residual_px: np.ndarray
    candidates: int

    def to_dict(self):
        return {
            "normal": [float(x) for x in self.ground.n],
            "height_m": self.ground.d,
            "per_pair_residual_px": [float(r) for r in self.per_pair_residual_px],
        }


def calibrate_ground_report(src, dst, k: CameraIntrinsics, measured_height: float,
                            pose_first: Optional[Pose] = None) -> CalibrationReport:
    """Estimate the floor normal from marked floor correspondences.

    Among the physically valid decompositions the one whose normal points most
    strongly along the camera's down axis is kept. The normal is returned in
    the first camera's frame, or in the world frame when ``pose_first`` is
    given.
    """
    if not measured_height > 0:
        raise ValidationError("measured height must be positive")
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    h = estimate_homography_dlt(src, dst)
    cands = decompose_homography(h, k, points=src)
    best = max(cands, key=lambda c: c.normal[1])
    n = -best.normal
    if pose_first is not None:
        n = pose_first.r.T @ n
    ground = GroundPlane.from_normal(n, measured_height)
    return CalibrationReport(ground, h, transfer_residuals(h, src, dst), len(cands))


def calibrate_ground(src, dst, k: CameraIntrinsics, measured_height: float,
                     pose_first: Optional[Pose] = None) -> GroundPlane:
    return calibrate_ground_report(src, dst, k, measured_height, pose_first).ground


# --------------------------------------------------------------------------
# Two-view relations used online


def relative_motion(pose_t: Pose, pose_prev: Pose):
    """Rotation and translation taking camera-t coordinates to camera-(t-1)."""
    r_rel = pose_prev.r @ pose_t.r.T
    t_rel = pose_prev.r @ (pose_t.c - pose_prev.c)
    return r_rel, t_rel


def ground_homography(pose_t: Pose, pose_prev: Pose, ground: GroundPlane,
                      k: CameraIntrinsics) -> Homography:
    """Homography mapping floor pixels of frame t onto frame t-1.

    ``ground.d`` is the height of the camera at ``pose_t`` above the floor.
    """
    r_rel, t_rel = relative_motion(pose_t, pose_prev)
    n_c = pose_t.r @ ground.n
    he = r_rel - np.outer(t_rel, n_c) / ground.d
    return Homography(k.matrix @ he @ k.inverse)


@dataclass(frozen=True)
class Epipole:
    homogeneous: np.ndarray
    at_infinity: bool

    @property
    def point(self) -> np.ndarray:
        if self.at_infinity:
            raise DegenerateMotion("epipole lies at infinity")
        return self.homogeneous[:2] / self.homogeneous[2]


def epipole_prev(pose_t: Pose, pose_prev: Pose, k: CameraIntrinsics) -> Epipole:
    """Image of the frame-t camera centre in frame t-1."""
    baseline = pose_t.c - pose_prev.c
    if np.linalg.norm(baseline) <= 1e-12:
        raise DegenerateMotion("camera centres coincide")
    e = k.matrix @ (pose_prev.r @ baseline)
    e = e / np.linalg.norm(e)
    return Epipole(_frozen_array(e), bool(abs(e[2]) < 1e-12))


@dataclass(frozen=True)
class Parallax:
    vector: np.ndarray
    rho: np.ndarray
    collinearity_residual: np.ndarray


def ground_pixel_parallax(a_prev, g_prev, e_prev) -> Parallax:
    """Parallax ``a - g`` and its signed scalar along ``g - e``.

    ``rho`` is the least-squares solution of ``a - g = rho (g - e)``; the
    perpendicular distance of ``a`` from the line through ``g`` and ``e`` is
    reported alongside. Accepts single points or stacked (N, 2) arrays.

    Raises:
        EpipoleCoincidesWithPoint: ``|g - e| <= 1e-9`` for some point.
    """
    a = np.asarray(a_prev, dtype=np.float64)
    g = np.asarray(g_prev, dtype=np.float64)
    e = np.asarray(e_prev, dtype=np.float64)
    p = a - g
    ge = g - e
    norm2 = (ge ** 2).sum(axis=-1)
    if np.any(np.sqrt(norm2) <= 1e-9):
        raise EpipoleCoincidesWithPoint("geometry correspondence coincides with the epipole")
    rho = (p * ge).sum(axis=-1) / norm2
    cross = p[..., 0] * ge[..., 1] - p[..., 1] * ge[..., 0]
    resid = np.abs(cross) / np.sqrt(norm2)
    return Parallax(p, rho, resid)


def height_side(rho, forward: bool = True, tol: float = 0.0):
    """+1 above the floor, -1 below, 0 on it.

    ``rho < 0`` means above the floor when the frame-t camera centre lies in
    front of the frame-(t-1) camera (forward motion); backward motion flips
    the sign.
    """
    rho = np.asarray(rho, dtype=np.float64)
    side = np.where(rho < -tol, 1, np.where(rho > tol, -1, 0))
    return side if forward else -side


def motion_direction(pose_t: Pose, pose_prev: Pose) -> int:
    """+1 when the camera moved forward along its frame-t optical axis, else -1."""
    baseline = pose_t.c - pose_prev.c
    if np.linalg.norm(baseline) <= 1e-12:
        raise DegenerateMotion("camera centres coincide")
    return 1 if float(baseline @ pose_t.optical_axis) > 0 else -1


# --------------------------------------------------------------------------
# Pose helpers


def yaw_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Extrinsics:
    """Rigid odometer(base) -> camera mounting.

    ``r_base_cam`` has the camera axes as columns expressed in the base frame
    (x forward, y left, z up); ``t_base_cam`` is the camera centre in the base
    frame.
    """

    r_base_cam: np.ndarray
    t_base_cam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r_base_cam", _frozen_array(self.r_base_cam, (3, 3)))
        object.__setattr__(self, "t_base_cam", _frozen_array(self.t_base_cam, (3,)))

    @classmethod
    def looking_forward(cls, height: float, pitch: float, forward_offset: float = 0.0):
        """Camera at ``height`` pitched down by ``pitch`` radians."""
        cp, sp = math.cos(pitch), math.sin(pitch)
        x_c = np.array([0.0, -1.0, 0.0])
        z_c = np.array([cp, 0.0, -sp])
        y_c = np.cross(z_c, x_c)
        return cls(np.column_stack([x_c, y_c, z_c]), np.array([forward_offset, 0.0, height]))

    def camera_pose(self, x: float, y: float, theta: float) -> Pose:
        r_wb = yaw_matrix(theta)
        c = np.array([x, y, 0.0]) + r_wb @ self.t_base_cam
        return Pose((r_wb @ self.r_base_cam).T, c)

    def to_dict(self):
        return {"r_base_cam": self.r_base_cam.tolist(), "t_base_cam": self.t_base_cam.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["r_base_cam"], dtype=np.float64),
                   np.array(d["t_base_cam"], dtype=np.float64))


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose of a camera at ``center`` looking at ``target`` (image y down)."""
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.vstack([x, y, z]), center)
