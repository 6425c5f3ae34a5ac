"""Synthetic reflective-floor scenes: exact two-view oracle and ray-cast frames.

World frame: the floor is ``z = 0`` with ``z`` up. Obstacles are cuboids
standing on the floor. Reflectors are cuboids hanging above the camera; they
are seen only through their mirror images below the floor, blended into the
floor colour, which makes them object-like but physically below ground.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, Extrinsics, GroundPlane, Pose, yaw_matrix

log = logging.getLogger(__name__)

FLOOR_NORMAL = np.array([0.0, 0.0, 1.0])
REFLECTION_WEIGHT = 0.6
LIGHT = np.array([0.35, -0.45, 0.82]) / np.linalg.norm([0.35, -0.45, 0.82])

KIND_FLOOR, KIND_OBSTACLE, KIND_REFLECTION = 0, 1, 2


def mirror_point(x, normal=FLOOR_NORMAL, offset: float = 0.0) -> np.ndarray:
    """Reflect points across the plane ``n.X + offset = 0``."""
    x = np.asarray(x, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    return x - 2.0 * (x @ n + offset)[..., None] * n


@dataclass
class Cuboid:
    """Box with vertical sides: footprint centre ``(x, y)``, ``size = (sx, sy)``,
    vertical extent ``[z0, z1]`` and yaw about the vertical axis."""

    center: Tuple[float, float]
    size: Tuple[float, float]
    z0: float
    z1: float
    color: Tuple[float, float, float]
    yaw: float = 0.0

    @property
    def height(self) -> float:
        return self.z1 - self.z0

    def corners(self) -> np.ndarray:
        hx, hy = self.size[0] / 2, self.size[1] / 2
        local = np.array([[sx * hx, sy * hy, z] for z in (self.z0, self.z1)
                          for sx in (-1, 1) for sy in (-1, 1)])
        rot = yaw_matrix(self.yaw)
        return local @ rot.T + np.array([self.center[0], self.center[1], 0.0])

    def mirrored(self) -> "Cuboid":
        return Cuboid(self.center, self.size, -self.z1, -self.z0, self.color, self.yaw)

    def to_dict(self):
        return {"center": list(map(float, self.center)), "size": list(map(float, self.size)),
                "z0": self.z0, "z1": self.z1, "color": list(map(float, self.color)),
                "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["center"]), tuple(d["size"]), float(d["z0"]), float(d["z1"]),
                   tuple(d["color"]), float(d.get("yaw", 0.0)))


@dataclass
class SceneSpec:
    """A scene plus a planar robot trajectory.

    ``odometry`` holds ``(x, y, theta)`` per frame; camera poses come from the
    rigid mounting ``extrinsics``.
    """

    intrinsics: CameraIntrinsics
    extrinsics: Extrinsics
    odometry: List[Tuple[float, float, float]]
    obstacles: List[Cuboid] = field(default_factory=list)
    reflectors: List[Cuboid] = field(default_factory=list)
    floor_color: Tuple[float, float, float] = (0.62, 0.58, 0.52)
    texture_amplitude: float = 0.08
    rng_seed: int = 0
    timestep_s: float = 0.1

    def __post_init__(self):
        for o in self.obstacles:
            if not (o.z0 >= 0 and o.z1 > o.z0):
                raise ValueError("obstacles must stand on or above the floor")
        if self.camera_height <= 0:
            raise ValueError("camera must be above the floor")

    @property
    def camera_height(self) -> float:
        return float(self.extrinsics.t_base_cam[2])

    @property
    def ground(self) -> GroundPlane:
        return GroundPlane(FLOOR_NORMAL, self.camera_height)

    @property
    def trajectory(self) -> List[Pose]:
        return [self.extrinsics.camera_pose(*o) for o in self.odometry]

    def pose(self, i: int) -> Pose:
        return self.extrinsics.camera_pose(*self.odometry[i])

    def texture_waves(self):
        rng = np.random.default_rng([self.rng_seed, 7])
        n = 6
        ang = rng.uniform(0, np.pi, n)
        lam = rng.uniform(0.04, 0.25, n)
        k = np.column_stack([np.cos(ang), np.sin(ang)]) * (2 * np.pi / lam)[:, None]
        phase = rng.uniform(0, 2 * np.pi, n)
        amp = rng.uniform(0.5, 1.0, n)
        return k, phase, amp / amp.sum()

    def to_dict(self):
        return {"intrinsics": self.intrinsics.to_dict(), "extrinsics": self.extrinsics.to_dict(),
                "odometry": [list(map(float, o)) for o in self.odometry],
                "obstacles": [o.to_dict() for o in self.obstacles],
                "reflectors": [r.to_dict() for r in self.reflectors],
                "floor_color": list(self.floor_color),
                "texture_amplitude": self.texture_amplitude, "rng_seed": self.rng_seed,
                "timestep_s": self.timestep_s}

    @classmethod
    def from_dict(cls, d):
        return cls(CameraIntrinsics.from_dict(d["intrinsics"]),
                   Extrinsics.from_dict(d["extrinsics"]),
                   [tuple(o) for o in d["odometry"]],
                   [Cuboid.from_dict(o) for o in d.get("obstacles", [])],
                   [Cuboid.from_dict(r) for r in d.get("reflectors", [])],
                   tuple(d.get("floor_color", (0.62, 0.58, 0.52))),
                   float(d.get("texture_amplitude", 0.08)), int(d.get("rng_seed", 0)),
                   float(d.get("timestep_s", 0.1)))


def default_camera(width=640, height=360, focal=500.0, cam_height=0.6,
                   pitch_deg=25.0) -> Tuple[CameraIntrinsics, Extrinsics]:
    k = CameraIntrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    return k, Extrinsics.looking_forward(cam_height, math.radians(pitch_deg))


def random_scene(seed: int, n_frames: int = 4, step_m: float = 0.11,
                 n_obstacles: Tuple[int, int] = (2, 3), n_reflectors: Tuple[int, int] = (2, 3),
                 width: int = 640, height: int = 360,
                 obstacle_distance: Tuple[float, float] = (0.9, 2.0)) -> SceneSpec:
    """Random scene: obstacles ahead on the floor, reflectors hanging above.

    The robot drives forward ``step_m`` per frame with a small constant yaw
    rate. Objects are placed relative to the last pose so that they are in
    view in the final frames.
    """
    rng = np.random.default_rng(seed)
    k, ext = default_camera(width, height)
    yaw_rate = rng.uniform(-0.02, 0.02)
    odo = []
    x = y = th = 0.0
    for _ in range(n_frames):
        odo.append((x, y, th))
        x += step_m * math.cos(th)
        y += step_m * math.sin(th)
        th += yaw_rate
    xe, ye, the = odo[-1]
    r2 = yaw_matrix(the)[:2, :2]

    def place(dist_range, lateral_frac, footprint, taken):
        for _ in range(100):
            dist = rng.uniform(*dist_range)
            half_fov = math.atan(width / 2 / k.fx) * 0.8
            lat = rng.uniform(-lateral_frac, lateral_frac) * dist * math.tan(half_fov)
            c = np.array([xe, ye]) + r2 @ np.array([ext.t_base_cam[0] + dist, lat])
            if all(np.linalg.norm(c - t) > footprint + r for t, r in taken):
                taken.append((c, footprint))
                return c
        return None

    palette = [(0.80, 0.22, 0.18), (0.18, 0.35, 0.75), (0.20, 0.62, 0.30), (0.85, 0.70, 0.15),
               (0.55, 0.25, 0.60), (0.15, 0.15, 0.15), (0.92, 0.92, 0.90), (0.40, 0.22, 0.10)]
    taken: list = []
    obstacles = []
    for _ in range(rng.integers(n_obstacles[0], n_obstacles[1] + 1)):
        sx, sy = rng.uniform(0.15, 0.30, 2)
        c = place(obstacle_distance, 0.85, max(sx, sy), taken)
        if c is None:
            continue
        col = palette[rng.integers(len(palette))]
        col = tuple(float(np.clip(v + rng.uniform(-0.05, 0.05), 0, 1)) for v in col)
        obstacles.append(Cuboid(tuple(c), (sx, sy), 0.0, float(rng.uniform(0.10, 0.25)), col,
                                float(rng.uniform(-0.6, 0.6))))
    reflectors = []
    for _ in range(rng.integers(n_reflectors[0], n_reflectors[1] + 1)):
        sx, sy = rng.uniform(0.2, 0.5, 2)
        c = place((2.0, 4.5), 1.0, 0.0, [])
        if c is None:
            continue
        z0 = float(rng.uniform(0.7, 1.3))
        col = palette[rng.integers(len(palette))]
        reflectors.append(Cuboid(tuple(c), (sx, sy), z0, z0 + float(rng.uniform(0.15, 0.4)),
                                 col, float(rng.uniform(-0.6, 0.6))))
    base = tuple(float(v) for v in rng.uniform(0.45, 0.70, 3))
    return SceneSpec(k, ext, odo, obstacles, reflectors, base, 0.08, int(seed))


# --------------------------------------------------------------------------
# Ray casting


def _box_hit(origin, dirs, box: Cuboid, cull=None):
    """Entry distance and outward normal of rays against ``box``.

    ``cull`` is an optional bool mask of rays worth testing; the others are
    reported as misses. Returns ``(t, normal)`` with ``t = inf`` for misses.
    """
    if cull is not None:
        t_all = np.full(len(dirs), np.inf)
        n_all = np.zeros_like(dirs)
        if cull.any():
            t_all[cull], n_all[cull] = _box_hit(origin, dirs[cull], box)
        return t_all, n_all
    rot = yaw_matrix(box.yaw)
    centre = np.array([box.center[0], box.center[1], 0.5 * (box.z0 + box.z1)])
    half = np.array([box.size[0] / 2, box.size[1] / 2, 0.5 * (box.z1 - box.z0)])
    o = (origin - centre) @ rot
    d = dirs @ rot
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    axis = tmin.argmax(axis=1)
    n_local = np.zeros_like(d)
    rows = np.arange(len(d))
    n_local[rows, axis] = -np.sign(d[rows, axis])
    return np.where(hit, t_near, np.inf), n_local @ rot.T


def _pattern3(p, seed):
    rng = np.random.default_rng([seed, 11])
    k = rng.normal(size=(4, 3))
    k *= (2 * np.pi / rng.uniform(0.03, 0.08, 4))[:, None] / np.linalg.norm(k, axis=1)[:, None]
    ph = rng.uniform(0, 2 * np.pi, 4)
    return np.sin(p @ k.T + ph).mean(axis=1)


def _shade(normals):
    return 0.55 + 0.45 * np.clip(normals @ LIGHT, 0.0, 1.0)


def _box_color(box: Cuboid, idx: int, points, normals, seed):
    tex = 1.0 + 0.10 * _pattern3(points, seed * 131 + idx)
    return np.clip(np.asarray(box.color)[None] * (_shade(normals) * tex)[:, None], 0, 1)


def _floor_color(spec: SceneSpec, xy, dist):
    k, phase, amp = spec.texture_waves()
    pat = (np.sin(xy @ k.T + phase) * amp).sum(axis=1)
    fade = np.exp(-dist / 4.0)
    return np.clip(np.asarray(spec.floor_color)[None] * (1 + spec.texture_amplitude * pat * fade)[:, None],
                   0, 1)


@dataclass
class RenderResult:
    rgb: np.ndarray        # (H, W, 3) float in [0, 1]
    labels: np.ndarray     # (H, W) uint8: 1 floor, >= 2 obstacle instance
    points: np.ndarray     # (H, W, 3) surface point (virtual point for reflections)
    kind: np.ndarray       # (H, W) KIND_* per pixel centre

    @property
    def floor_mask(self):
        return self.labels == 1

    @property
    def obstacle_mask(self):
        return self.labels >= 2


def _screen_cull(box: Cuboid, pose: Pose, k: CameraIntrinsics, u, v):
    """Rays that can hit ``box``: inside its projected bounding rectangle."""
    px, depth = pose.project(box.corners(), k)
    if np.any(depth <= 1e-6):
        return None
    return ((u >= px[:, 0].min() - 1) & (u <= px[:, 0].max() + 1) &
            (v >= px[:, 1].min() - 1) & (v <= px[:, 1].max() + 1))


def _cast(spec: SceneSpec, pose: Pose, u, v):
    k = spec.intrinsics
    pix = np.column_stack([u, v, np.ones_like(u)])
    dirs = (pix @ k.inverse.T) @ pose.r
    origin = pose.c
    n = len(u)
    with np.errstate(divide="ignore"):
        t_floor = np.where(dirs[:, 2] < 0, -origin[2] / dirs[:, 2], np.inf)
    best_t = t_floor.copy()
    label = np.ones(n, dtype=np.int64)
    color = np.zeros((n, 3))
    normals = np.zeros((n, 3))
    for i, box in enumerate(spec.obstacles):
        t, nrm = _box_hit(origin, dirs, box, _screen_cull(box, pose, k, u, v))
        closer = t < best_t
        best_t[closer] = t[closer]
        label[closer] = i + 2
        normals[closer] = nrm[closer]
    points = origin + dirs * np.where(np.isfinite(best_t), best_t, 0.0)[:, None]
    kind = np.where(label >= 2, KIND_OBSTACLE, KIND_FLOOR)

    floor = (label == 1) & np.isfinite(t_floor)
    dist = np.linalg.norm(points[:, :2] - origin[:2], axis=1)
    color[floor] = _floor_color(spec, points[floor, :2], dist[floor])
    for i, box in enumerate(spec.obstacles):
        m = label == i + 2
        if m.any():
            color[m] = _box_color(box, i, points[m], normals[m], spec.rng_seed)
    # reflections: mirror images of the reflectors, below the floor
    refl_t = np.full(n, np.inf)
    for i, box in enumerate(spec.reflectors):
        vb = box.mirrored()
        t, nrm = _box_hit(origin, dirs, vb, _screen_cull(vb, pose, k, u, v))
        closer = floor & (t < refl_t)
        if not closer.any():
            continue
        refl_t[closer] = t[closer]
        vp = origin + dirs[closer] * t[closer, None]
        real_p = mirror_point(vp)
        real_n = nrm[closer] * np.array([1.0, 1.0, -1.0])
        c = _box_color(box, 100 + i, real_p, real_n, spec.rng_seed)
        color[closer] = REFLECTION_WEIGHT * c + (1 - REFLECTION_WEIGHT) * color[closer]
        points[closer] = vp
        kind[closer] = KIND_REFLECTION
    far = ~np.isfinite(best_t)
    color[far] = 0.5
    label[far] = 0
    return color, label, points, kind


def render(spec: SceneSpec, frame_index: int, supersample: int = 2) -> RenderResult:
    """Ray-cast one frame; colour is averaged over ``supersample^2`` sub-rays."""
    k = spec.intrinsics
    if k.width < 64 or k.height < 64:
        raise ValueError("resolution must be at least 64x64")
    pose = spec.pose(frame_index)
    vv, uu = np.mgrid[0:k.height, 0:k.width]
    u, v = uu.ravel().astype(np.float64), vv.ravel().astype(np.float64)
    _, label, points, kind = _cast(spec, pose, u, v)
    acc = np.zeros((u.size, 3))
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    for dy in offs:
        for dx in offs:
            c, _, _, _ = _cast(spec, pose, u + dx, v + dy)
            acc += c
    rgb = (acc / supersample ** 2).reshape(k.height, k.width, 3)
    return RenderResult(rgb, label.reshape(k.height, k.width).astype(np.uint8),
                        points.reshape(k.height, k.width, 3), kind.reshape(k.height, k.width))


# --------------------------------------------------------------------------
# Oracle correspondences


@dataclass
class OracleFrame:
    """Exact correspondences between frame ``t`` and ``t - q``."""

    x_t: np.ndarray
    a_prev: np.ndarray
    height: np.ndarray
    kind: np.ndarray
    pose_t: Pose
    pose_prev: Pose
    n_behind: int = 0
    labels: Optional[np.ndarray] = None


def project_pair(points, pose_t: Pose, pose_prev: Pose, k: CameraIntrinsics):
    """Project world points into both views, dropping those behind a camera."""
    x_t, z_t = pose_t.project(points, k)
    a, z_p = pose_prev.project(points, k)
    ok = (z_t > 1e-6) & (z_p > 1e-6)
    return x_t, a, ok


def scene_points(spec: SceneSpec, per_box: int = 200, floor_grid: int = 15, seed: int = 0):
    """Floor grid, obstacle surface samples and mirrored reflector samples.

    Returns ``(points (N, 3), kind (N,))``.
    """
    rng = np.random.default_rng(seed)
    pose = spec.pose(len(spec.odometry) - 1)
    fwd = pose.r[2, :2] / np.linalg.norm(pose.r[2, :2])
    left = np.array([-fwd[1], fwd[0]])
    gd, gl = np.meshgrid(np.linspace(0.8, 5.0, floor_grid), np.linspace(-1.5, 1.5, floor_grid))
    floor_xy = pose.c[:2] + gd.ravel()[:, None] * fwd + gl.ravel()[:, None] * left
    pts = [np.column_stack([floor_xy, np.zeros(len(floor_xy))])]
    kinds = [np.full(len(floor_xy), KIND_FLOOR)]
    for group, kind, mirror in ((spec.obstacles, KIND_OBSTACLE, False),
                                (spec.reflectors, KIND_REFLECTION, True)):
        for box in group:
            local = rng.uniform(-0.5, 0.5, (per_box, 3))
            # push samples to the surface along their largest coordinate
            ax = np.abs(local).argmax(axis=1)
            local[np.arange(per_box), ax] = np.sign(local[np.arange(per_box), ax]) * 0.5
            scale = np.array([box.size[0], box.size[1], box.z1 - box.z0])
            p = (local * scale) @ yaw_matrix(box.yaw).T
            p += np.array([box.center[0], box.center[1], 0.5 * (box.z0 + box.z1)])
            if mirror:
                p = mirror_point(p)
            pts.append(p)
            kinds.append(np.full(per_box, kind))
    return np.vstack(pts), np.concatenate(kinds)


def generate_oracle(spec: SceneSpec, frame_index: int, q: int = 1, per_box: int = 200,
                    with_labels: bool = False) -> OracleFrame:
    """Exact correspondences of scene points between frames ``t`` and ``t - q``."""
    if not (0 <= frame_index - q and frame_index < len(spec.odometry)) or q < 1:
        raise IndexError("frame pair outside the trajectory")
    pose_t, pose_prev = spec.pose(frame_index), spec.pose(frame_index - q)
    pts, kinds = scene_points(spec, per_box, seed=spec.rng_seed)
    x_t, a, ok = project_pair(pts, pose_t, pose_prev, spec.intrinsics)
    n_behind = int((~ok).sum())
    if n_behind:
        log.info("dropped %d points behind a camera", n_behind)
    labels = render(spec, frame_index, supersample=1).labels if with_labels else None
    return OracleFrame(x_t[ok], a[ok], pts[ok, 2], kinds[ok], pose_t, pose_prev, n_behind, labels)


def random_oracle_points(pose_t: Pose, pose_prev: Pose, k: CameraIntrinsics, n: int,
                         height_range=(-0.5, 0.5), rng=None, max_height=None):
    """Points of random height along random frame-t pixel rays.

    Each sample picks a pixel of frame t and a height ``z`` and places the
    point where the pixel ray meets the plane at that height; samples behind
    either camera are redrawn.

    Returns ``(points (n, 3), x_t (n, 2), a_prev (n, 2))``.
    """
    rng = np.random.default_rng(rng)
    out_p, out_x, out_a = [], [], []
    need = n
    while need > 0:
        m = max(2 * need, 64)
        u = rng.uniform(0, k.width - 1, m)
        v = rng.uniform(0, k.height - 1, m)
        z = rng.uniform(height_range[0], height_range[1], m)
        dirs = np.column_stack([u, v, np.ones(m)]) @ k.inverse.T @ pose_t.r
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (z - pose_t.c[2]) / dirs[:, 2]
        p = pose_t.c + dirs * t[:, None]
        keep = np.isfinite(t) & (t > 0)
        if max_height is not None:
            keep &= z < max_height
        p = p[keep]
        x_t, a, ok = project_pair(p, pose_t, pose_prev, k)
        p, x_t, a = p[ok][:need], x_t[ok][:need], a[ok][:need]
        out_p.append(p)
        out_x.append(x_t)
        out_a.append(a)
        need -= len(p)
    return np.vstack(out_p), np.vstack(out_x), np.vstack(out_a)


# --------------------------------------------------------------------------
# Perturbations


def line_kernel(k: int, angle_deg: float) -> np.ndarray:
    """Normalized length-``k`` line kernel at ``angle_deg``."""
    if k <= 1:
        return np.ones((1, 1))
    size = k if k % 2 else k + 1
    ker = np.zeros((size, size))
    c = (size - 1) / 2.0
    a = math.radians(angle_deg)
    for s in np.linspace(-(k - 1) / 2.0, (k - 1) / 2.0, 4 * k):
        x, y = c + s * math.cos(a), c - s * math.sin(a)
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                if 0 <= y0 + dy < size and 0 <= x0 + dx < size:
                    ker[y0 + dy, x0 + dx] += wx * wy
    return ker / ker.sum()


def motion_blur(img: np.ndarray, k: int, angle_deg: Optional[float] = None, rng=None) -> np.ndarray:
    """Convolve with a line kernel; a random angle in [-180, 180] if unset."""
    if k and k % 2 == 0:
        raise ValueError("blur kernel size must be odd or 0")
    if k <= 1:
        return np.array(img, dtype=np.float64, copy=True)
    if angle_deg is None:
        angle_deg = float(np.random.default_rng(rng).uniform(-180.0, 180.0))
    ker = line_kernel(k, angle_deg)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return ndimage.convolve(img, ker, mode="nearest")
    return np.stack([ndimage.convolve(img[..., c], ker, mode="nearest")
                     for c in range(img.shape[2])], axis=-1)


def perturb_odometry(odo_t, odo_prev, translation_pct: float = 0.0, rotation_rad: float = 0.0,
                     rng=None):
    """Noisy frame-t odometry relative to frame t-q.

    The planar displacement is scaled per axis by ``1 + eps`` with ``eps``
    uniform in ``[-translation_pct, translation_pct]`` (a fraction), and the
    heading receives a yaw error uniform in ``[-rotation_rad, rotation_rad]``.
    """
    rng = np.random.default_rng(rng)
    ex, ey = rng.uniform(-translation_pct, translation_pct, 2) if translation_pct else (0.0, 0.0)
    dth = rng.uniform(-rotation_rad, rotation_rad) if rotation_rad else 0.0
    x = odo_prev[0] + (odo_t[0] - odo_prev[0]) * (1 + ex)
    y = odo_prev[1] + (odo_t[1] - odo_prev[1]) * (1 + ey)
    return (x, y, odo_t[2] + dth)


def write_synthetic_sequence(spec: SceneSpec, root, supersample: int = 2, with_labels=True,
                             write_ground: bool = False):
    """Render every frame of ``spec`` into the sequence layout of :mod:`reflectobs.io`."""
    import json
    from pathlib import Path

    from .io import write_sequence

    frames, labels = [], {}
    for i in range(len(spec.odometry)):
        r = render(spec, i, supersample)
        frames.append(r.rgb)
        if with_labels:
            labels[i] = r.labels
    root = write_sequence(root, frames, spec.odometry, spec.intrinsics, spec.extrinsics,
                          labels if with_labels else None, spec.timestep_s,
                          spec.ground if write_ground else None)
    (Path(root) / "scene.json").write_text(json.dumps(spec.to_dict(), indent=1))
    return root
