"""On-disk sequence layout.

::

    <seq>/
      frames/000000.png ...     RGB frames
      poses.csv                 frame_id,timestamp_s,x_m,y_m,theta_rad
      intrinsics.json           {fx, fy, cx, cy, width, height}
      extrinsics.json           {r_base_cam, t_base_cam}
      labels/000000.png ...     optional; 0 background, 1 floor, >= 2 obstacle id
      ground.json               optional calibrated plane {normal, height_m}
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol

import numpy as np
from PIL import Image

from .errors import CountMismatch, InsufficientMotion, MalformedRow, MissingFile, ValidationError
from .geometry import CameraIntrinsics, Extrinsics, GroundPlane, Pose

POSE_COLUMNS = ["frame_id", "timestamp_s", "x_m", "y_m", "theta_rad"]


@dataclass
class OdometryPose:
    frame_id: str
    timestamp_s: float
    x_m: float
    y_m: float
    theta_rad: float

    @property
    def planar(self):
        return (self.x_m, self.y_m, self.theta_rad)


@dataclass
class SequenceRecord:
    root: Path
    frames: List[Path]
    poses: List[OdometryPose]
    intrinsics: CameraIntrinsics
    extrinsics: Extrinsics
    labels: Dict[int, Path] = field(default_factory=dict)
    ground: Optional[GroundPlane] = None

    def __len__(self):
        return len(self.frames)

    def camera_pose(self, i: int) -> Pose:
        return self.extrinsics.camera_pose(*self.poses[i].planar)

    def ground_plane(self) -> GroundPlane:
        """Calibrated plane if present, otherwise the level floor below the camera."""
        if self.ground is not None:
            return self.ground
        return GroundPlane(np.array([0.0, 0.0, 1.0]), float(self.extrinsics.t_base_cam[2]))

    def image(self, i: int) -> np.ndarray:
        return read_rgb(self.frames[i])

    def label_image(self, i: int) -> np.ndarray:
        with Image.open(self.labels[i]) as im:
            return np.asarray(im, dtype=np.int64)

    @property
    def annotated(self) -> List[int]:
        return sorted(self.labels)


class SequenceReader(Protocol):
    def __call__(self, path) -> SequenceRecord: ...


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_rgb(path, rgb: np.ndarray):
    arr = np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def write_labels(path, labels: np.ndarray):
    labels = np.asarray(labels)
    if labels.max(initial=0) > 255:
        raise ValidationError("at most 253 obstacle instances per frame")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def read_poses(path) -> List[OdometryPose]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing {path}")
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != POSE_COLUMNS:
            raise MalformedRow(path, 1, f"header must be {','.join(POSE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(POSE_COLUMNS):
                raise MalformedRow(path, lineno, f"expected {len(POSE_COLUMNS)} fields")
            try:
                vals = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in vals):
                raise MalformedRow(path, lineno, "non-finite value")
            out.append(OdometryPose(row[0].strip(), *vals))
    for i in range(1, len(out)):
        if out[i].timestamp_s < out[i - 1].timestamp_s:
            raise MalformedRow(path, i + 2, "timestamps must be non-decreasing")
    return out


def write_poses(path, poses: List[OdometryPose]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSE_COLUMNS)
        for p in poses:
            w.writerow([p.frame_id, repr(p.timestamp_s), repr(p.x_m), repr(p.y_m),
                        repr(p.theta_rad)])


def _read_json(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def load_sequence(path) -> SequenceRecord:
    """Read and validate a sequence directory.

    Raises:
        MissingFile: a required file or frame image is absent.
        MalformedRow: a bad line in ``poses.csv`` (line number included).
        CountMismatch: pose rows and frame images disagree.
    """
    root = Path(path)
    if not root.is_dir():
        raise MissingFile(f"sequence directory {root} does not exist")
    poses = read_poses(root / "poses.csv")
    try:
        k = CameraIntrinsics.from_dict(_read_json(root / "intrinsics.json"))
        ext = Extrinsics.from_dict(_read_json(root / "extrinsics.json"))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{root}: bad calibration file ({exc})") from None
    frame_dir = root / "frames"
    if not frame_dir.is_dir():
        raise MissingFile(f"missing {frame_dir}")
    images = sorted(frame_dir.glob("*.png"))
    if len(images) != len(poses):
        raise CountMismatch(f"{len(poses)} poses but {len(images)} frames")
    frames = []
    for p in poses:
        f = frame_dir / f"{p.frame_id}.png"
        if not f.is_file():
            raise MissingFile(f"missing frame {f}")
        frames.append(f)
    labels = {}
    label_dir = root / "labels"
    if label_dir.is_dir():
        index = {p.frame_id: i for i, p in enumerate(poses)}
        for f in sorted(label_dir.glob("*.png")):
            if f.stem not in index:
                raise CountMismatch(f"label {f.name} has no matching frame")
            labels[index[f.stem]] = f
    ground = None
    if (root / "ground.json").is_file():
        ground = GroundPlane.from_dict(_read_json(root / "ground.json"))
    return SequenceRecord(root, frames, poses, k, ext, labels, ground)


def select_frame_interval(record: SequenceRecord, t: int, distance_threshold_m: float = 0.20,
                          tol: float = 1e-9) -> int:
    """Smallest ``q >= 1`` whose camera baseline to frame ``t`` exceeds the threshold.

    Distances within ``tol`` of the threshold do not count as exceeding it.
    """
    if t < 1 or t >= len(record.poses):
        raise ValidationError(f"frame {t} has no predecessor")
    c_t = record.camera_pose(t).c
    for q in range(1, t + 1):
        if np.linalg.norm(c_t - record.camera_pose(t - q).c) > distance_threshold_m + tol:
            return q
    raise InsufficientMotion(f"frame {t}: camera moved less than {distance_threshold_m} m")


def write_sequence(root, frames, odometry, intrinsics: CameraIntrinsics, extrinsics: Extrinsics,
                   labels: Optional[Dict[int, np.ndarray]] = None, timestep_s: float = 0.1,
                   ground: Optional[GroundPlane] = None):
    """Write frames and metadata in the layout read by ``load_sequence``."""
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    poses = []
    for i, (img, odo) in enumerate(zip(frames, odometry)):
        fid = f"{i:06d}"
        write_rgb(root / "frames" / f"{fid}.png", img)
        poses.append(OdometryPose(fid, round(i * timestep_s, 9), float(odo[0]), float(odo[1]),
                                  float(odo[2])))
    write_poses(root / "poses.csv", poses)
    (root / "intrinsics.json").write_text(json.dumps(intrinsics.to_dict(), indent=1))
    (root / "extrinsics.json").write_text(json.dumps(extrinsics.to_dict(), indent=1))
    if labels:
        (root / "labels").mkdir(exist_ok=True)
        for i, lab in labels.items():
            write_labels(root / "labels" / f"{i:06d}.png", lab)
    if ground is not None:
        (root / "ground.json").write_text(json.dumps(ground.to_dict(), indent=1))
    return root
