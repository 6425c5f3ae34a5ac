"""Frame-level detection pipeline, training-set construction and detection runs."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ReflectObsError, ValidationError
from .features import (FeatureSet, GeoPointFeatures, N_APPEARANCE, extract_features,
                       point_geometry, rgb_to_hsv, write_feature_csv)
from .flow import LKFlow, LKParams, TrackResult, to_gray
from .geometry import Homography, Pose, ground_homography, motion_direction
from .io import SequenceRecord, select_frame_interval
from .model import (FLOOR_CLASS, GEOMETRY_WHEN_CONFIDENT, ForestConfig, RegressionForest,
                    agfm_predict, label_samples, predict, train)
from .probmap import ScoredProposal, build_map, segment
from .proposals import (EdgePointSet, Proposal, ProposalParams, detect_edges,
                        generate_proposals, select_edge_points)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    tau_e: float = 0.8
    tau_gc: float = 0.1
    tau_b: int = 50
    n_trees: int = 50
    max_depth: int = 20
    min_leaf: int = 5
    distance_threshold_m: float = 0.20
    edge_min_response: float = 0.0
    edge_percentile: float = 99.0
    lk_levels: int = 3
    lk_window: int = 21
    lk_max_iters: int = 30
    lk_eps: float = 0.01
    scales: Tuple[int, ...] = (32, 64, 128, 256, 512)
    aspect_ratios: Tuple[float, ...] = (0.5, 1.0, 2.0)
    stride: int = 16
    top_j: int = 1000
    kappa: float = 1.5
    floor_fraction: float = 0.4
    gating: str = GEOMETRY_WHEN_CONFIDENT
    seed: int = 0

    def __post_init__(self):
        checks = [
            (0 < self.tau_e <= 1, "tau_e must lie in (0, 1]"),
            (self.tau_gc >= 0, "tau_gc must be >= 0"),
            (self.tau_b >= 1, "tau_b must be >= 1"),
            (self.n_trees >= 1, "n_trees must be >= 1"),
            (self.distance_threshold_m >= 0, "distance threshold must be >= 0"),
            (0 <= self.edge_min_response < 1, "edge_min_response must lie in [0, 1)"),
            (self.lk_window >= 3 and self.lk_window % 2 == 1, "LK window must be odd and >= 3"),
            (self.stride >= 1 and self.top_j >= 1, "stride and top_j must be >= 1"),
            (0 <= self.floor_fraction < 1, "floor_fraction must lie in [0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        object.__setattr__(self, "aspect_ratios", tuple(float(a) for a in self.aspect_ratios))

    @property
    def lk(self) -> LKParams:
        return LKParams(self.lk_levels, self.lk_window, self.lk_max_iters, self.lk_eps)

    @property
    def proposals(self) -> ProposalParams:
        return ProposalParams(self.scales, self.aspect_ratios, self.stride, self.top_j, self.kappa)

    def forest(self, seed_offset: int = 0) -> ForestConfig:
        return ForestConfig(self.n_trees, self.max_depth, self.min_leaf, "sqrt", True,
                            self.seed + seed_offset)

    def to_dict(self):
        d = asdict(self)
        d["scales"] = list(self.scales)
        d["aspect_ratios"] = list(self.aspect_ratios)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("scales", "aspect_ratios"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class FrameInputs:
    """Everything the feature stage needs for one frame pair."""

    rgb_t: np.ndarray
    rgb_prev: np.ndarray
    pose_t: Pose
    pose_prev: Pose
    q: int


@dataclass
class FrameFeatures:
    edges: np.ndarray
    points: EdgePointSet
    proposals: List[Proposal]
    homography: Homography
    track: TrackResult
    geo: GeoPointFeatures
    features: FeatureSet


@dataclass
class Providers:
    """Pluggable stand-ins; ``None`` selects the built-in implementation."""

    edges: Optional[Callable[[int], np.ndarray]] = None
    proposals: Optional[Callable[[int], List[Proposal]]] = None
    flow: Optional[Callable] = None


def frame_inputs(record: SequenceRecord, t: int, config: PipelineConfig,
                 rgb_t=None, rgb_prev=None, odometry=None) -> FrameInputs:
    """Load frame ``t`` and its partner ``t - q``.

    ``odometry`` optionally overrides the planar pose of frame ``t``.
    """
    q = select_frame_interval(record, t, config.distance_threshold_m)
    pose_t = record.camera_pose(t) if odometry is None else record.extrinsics.camera_pose(*odometry)
    return FrameInputs(record.image(t) if rgb_t is None else rgb_t,
                       record.image(t - q) if rgb_prev is None else rgb_prev,
                       pose_t, record.camera_pose(t - q), q)


def compute_features(inp: FrameInputs, record: SequenceRecord, config: PipelineConfig,
                     providers: Providers = Providers(), frame_index: int = 0) -> FrameFeatures:
    """Edges, proposals, tracking and the 19-channel features of one frame."""
    k = record.intrinsics
    gray_t = to_gray(inp.rgb_t)
    if providers.edges is not None:
        edges = providers.edges(frame_index)
    else:
        edges = detect_edges(gray_t, config.edge_min_response, config.edge_percentile)
    if edges.shape != gray_t.shape:
        raise ValidationError("edge map size differs from the frame")
    points = select_edge_points(edges, config.tau_e)
    img_size = (k.width, k.height)
    if providers.proposals is not None:
        props = providers.proposals(frame_index)
    else:
        props = generate_proposals(points, img_size, config.proposals)
    h = ground_homography(inp.pose_t, inp.pose_prev, record.ground_plane(), k)
    pts = points.points.astype(np.float64)
    flow = providers.flow or LKFlow(config.lk)
    track = flow(pts, inp.rgb_t, inp.rgb_prev, initial_prev=h.transfer(pts) if len(pts) else None)
    gamma = motion_direction(inp.pose_t, inp.pose_prev)
    geo = point_geometry(track, h, gamma)
    fs = extract_features(props, points, rgb_to_hsv(inp.rgb_t), geo)
    return FrameFeatures(edges, points, props, h, track, geo, fs)


def score_proposals(ff: FrameFeatures, agr: RegressionForest, ar: RegressionForest,
                    config: PipelineConfig, mode: str = "agfm") -> np.ndarray:
    """Scores per proposal; ``mode`` is ``agfm``, ``agr`` or ``ar``."""
    x = ff.features.vectors
    if len(x) == 0:
        return np.zeros(0)
    if mode == "agfm":
        return agfm_predict(agr, ar, x, ff.features.lambda_region, config.tau_gc, config.gating)
    if mode == "agr":
        return predict(agr, x)
    if mode == "ar":
        return predict(ar, x[:, :N_APPEARANCE])
    raise ValidationError(f"unknown scoring mode {mode!r}")


def probability_map(ff: FrameFeatures, scores, config: PipelineConfig, img_size) -> np.ndarray:
    scored = [ScoredProposal(p, float(np.clip(s, 0.0, 1.0))) for p, s in zip(ff.proposals, scores)]
    return build_map(scored, config.tau_b, img_size)


# --------------------------------------------------------------------------
# Training


@dataclass
class TrainingSet:
    ids: List[str] = field(default_factory=list)
    x: List[np.ndarray] = field(default_factory=list)
    lam: List[np.ndarray] = field(default_factory=list)
    n_points: List[np.ndarray] = field(default_factory=list)
    y: List[np.ndarray] = field(default_factory=list)

    def add(self, prefix: str, ff: FrameFeatures, labels: np.ndarray, config: PipelineConfig):
        floor = labels == 1
        inst = np.where(labels >= 2, labels - 1, 0)
        samples = label_samples(ff.proposals, floor, inst, config.floor_fraction)
        keep = np.array([s.klass == FLOOR_CLASS for s in samples], dtype=bool)
        if not keep.any():
            return
        idx = np.flatnonzero(keep)
        self.ids.extend(f"{prefix}:{ff.proposals[i].id}" for i in idx)
        self.x.append(ff.features.vectors[idx])
        self.lam.append(ff.features.lambda_region[idx])
        self.n_points.append(ff.features.n_points[idx])
        self.y.append(np.array([samples[i].label_iou for i in idx]))

    def arrays(self):
        if not self.x:
            return np.zeros((0, 19)), np.zeros(0), np.zeros(0, dtype=int), np.zeros(0)
        return (np.vstack(self.x), np.concatenate(self.lam), np.concatenate(self.n_points),
                np.concatenate(self.y))

    def write_csv(self, path, config_hash=None):
        x, lam, npt, y = self.arrays()
        write_feature_csv(path, self.ids, x, lam, npt, y, [FLOOR_CLASS] * len(y), config_hash)


def collect_training(records: Sequence[SequenceRecord], config: PipelineConfig,
                     on_frame: Optional[Callable] = None) -> TrainingSet:
    ts = TrainingSet()
    for rec in records:
        for t in rec.annotated:
            try:
                inp = frame_inputs(rec, t, config)
            except ReflectObsError as exc:
                log.warning("%s frame %d skipped: %s", rec.root, t, exc)
                continue
            ff = compute_features(inp, rec, config, frame_index=t)
            ts.add(f"{rec.root.name}/{t}", ff, rec.label_image(t), config)
            if on_frame:
                on_frame(rec, t, ff)
    return ts


def train_models(ts: TrainingSet, config: PipelineConfig):
    """AGR on all 19 channels and AR on the 17 appearance channels."""
    x, _, _, y = ts.arrays()
    agr = train(x, y, config.forest(0))
    ar = train(x[:, :N_APPEARANCE], y, config.forest(1))
    return agr, ar


# --------------------------------------------------------------------------
# Detection


@dataclass
class FrameResult:
    frame: int
    q: int
    prob: Dict[str, np.ndarray]
    features: Optional[FrameFeatures] = None
    scores: Dict[str, np.ndarray] = field(default_factory=dict)


def detect_frame(record: SequenceRecord, t: int, agr, ar, config: PipelineConfig,
                 modes=("agfm",), providers: Providers = Providers(), keep_features=False,
                 **overrides) -> FrameResult:
    inp = frame_inputs(record, t, config, **overrides)
    ff = compute_features(inp, record, config, providers, frame_index=t)
    size = (record.intrinsics.width, record.intrinsics.height)
    scores = {m: score_proposals(ff, agr, ar, config, m) for m in modes}
    prob = {m: probability_map(ff, scores[m], config, size) for m in modes}
    return FrameResult(t, inp.q, prob, ff if keep_features else None, scores)


def run_detect(record: SequenceRecord, agr, ar, config: PipelineConfig, frames=None,
               threshold: Optional[float] = None, providers: Providers = Providers(),
               keep_features=False):
    """Detect on ``frames`` (annotated frames by default, else every frame).

    Frames without enough motion or failing downstream are logged and
    skipped. Returns ``(results, masks, skipped)``.
    """
    if frames is None:
        frames = record.annotated or list(range(1, len(record)))
    results, masks, skipped = [], {}, {}
    for t in frames:
        try:
            res = detect_frame(record, t, agr, ar, config, providers=providers,
                               keep_features=keep_features)
        except ReflectObsError as exc:
            log.warning("frame %d skipped: %s", t, exc)
            skipped[t] = f"{type(exc).__name__}: {exc}"
            continue
        results.append(res)
        if threshold is not None:
            masks[t] = segment(res.prob["agfm"], threshold)
    return results, masks, skipped
