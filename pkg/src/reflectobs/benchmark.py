"""Synthetic end-to-end benchmark and robustness harness.

Sequences are rendered once into a cache directory and reused. A benchmark
run trains AGR and AR on the training sequences, detects on the test
sequences and reports pixel and instance metrics of every scoring variant at
a fixed pixel FPR.

Run ``python -m reflectobs.benchmark --root DIR`` for a JSON report.
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import synth
from .errors import ReflectObsError
from .evaluation import roc, split_labels, summarize
from .io import SequenceRecord, load_sequence, select_frame_interval
from .pipeline import PipelineConfig, collect_training, detect_frame, train_models

log = logging.getLogger(__name__)

#: Pipeline settings of the synthetic benchmark. The edge floor suppresses the
#: floor texture, and the proposal grid matches desk-scale objects at 640x360.
BENCHMARK_CONFIG = dict(edge_min_response=0.3, lk_window=11, scales=(32, 48, 64, 96, 128, 192),
                        stride=16, kappa=0.75)

#: Scene generator settings: three frames 0.22 m apart, so frames 1 and 2 pair
#: with their direct predecessor under the 0.2 m baseline rule.
SCENE = dict(n_frames=3, step_m=0.22, n_obstacles=(1, 2), n_reflectors=(2, 3),
             obstacle_distance=(0.9, 1.6))

TRAIN_SEEDS = range(1000, 1016)
TEST_SEEDS = range(0, 20)
MODES = ("agfm", "ar", "agr")


def benchmark_config(**overrides) -> PipelineConfig:
    return PipelineConfig(**{**BENCHMARK_CONFIG, **overrides})


def ensure_sequence(root, seed: int, scene: Optional[dict] = None, supersample: int = 2
                    ) -> SequenceRecord:
    """Load the sequence of ``seed`` from ``root``, rendering it first if absent.

    Only frames with a predecessor keep their labels.
    """
    d = Path(root) / f"seq_{seed:05d}"
    if not (d / "poses.csv").is_file():
        spec = synth.random_scene(seed, **(SCENE if scene is None else scene))
        synth.write_synthetic_sequence(spec, d, supersample=supersample)
    rec = load_sequence(d)
    rec.labels = {t: p for t, p in rec.labels.items() if t >= 1}
    return rec


@dataclass
class Perturbation:
    """Test-time noise: odometry error of frame ``t`` and motion blur."""

    translation_pct: float = 0.0
    rotation_rad: float = 0.0
    blur_kernel: int = 0
    seed: int = 0


@dataclass
class Detections:
    maps: Dict[str, List[np.ndarray]]
    gts: List[tuple]
    frames: List[str]
    skipped: Dict[str, str] = field(default_factory=dict)
    seconds: float = 0.0


def detect_all(records: Sequence[SequenceRecord], agr, ar, config: PipelineConfig,
               modes=MODES, perturbation: Optional[Perturbation] = None) -> Detections:
    """Probability maps of every annotated frame.

    Perturbations are seeded per frame, so the blur directions of a frame
    pair are the same for every kernel size.
    """
    pert = perturbation or Perturbation()
    out = Detections({m: [] for m in modes}, [], [])
    start = time.perf_counter()
    for r_i, rec in enumerate(records):
        for t in rec.annotated:
            name = f"{rec.root.name}/{t}"
            kw = {}
            rng = np.random.default_rng([pert.seed, r_i, t])
            try:
                q = select_frame_interval(rec, t, config.distance_threshold_m)
            except ReflectObsError:
                q = 1
            if pert.translation_pct or pert.rotation_rad:
                kw["odometry"] = synth.perturb_odometry(
                    rec.poses[t].planar, rec.poses[t - q].planar, pert.translation_pct,
                    pert.rotation_rad, rng)
            if pert.blur_kernel:
                angles = rng.uniform(-180.0, 180.0, 2)
                kw["rgb_t"] = synth.motion_blur(rec.image(t), pert.blur_kernel, angles[0])
                kw["rgb_prev"] = synth.motion_blur(rec.image(t - q), pert.blur_kernel, angles[1])
            try:
                res = detect_frame(rec, t, agr, ar, config, modes=modes, **kw)
            except ReflectObsError as exc:
                log.warning("%s skipped: %s", name, exc)
                out.skipped[name] = str(exc)
                continue
            for m in modes:
                out.maps[m].append(res.prob[m])
            out.gts.append(split_labels(rec.label_image(t)))
            out.frames.append(name)
    out.seconds = time.perf_counter() - start
    return out


@dataclass
class OperatingPoint:
    threshold: float
    fpr: float
    tpr: float
    itpr: float
    mifp: float
    n_frames: int
    n_obstacles: int


def operating_point(maps: Sequence[np.ndarray], gts: Sequence[tuple],
                    fpr_target: float = 0.02) -> OperatingPoint:
    """Metrics at the lowest threshold whose pooled pixel FPR is within the target."""
    curve = roc(maps, [(f, o) for f, o, _ in gts])
    thr, fpr, tpr = curve.operating_point(fpr_target)
    pc, ic = summarize([m >= thr for m in maps], gts)
    return OperatingPoint(thr, pc.fpr, pc.tpr, ic.itpr, ic.mifp, ic.n_img, ic.n_obs)


@dataclass
class BenchmarkReport:
    config_hash: str
    results: Dict[str, OperatingPoint]
    timings: Dict[str, float]
    n_train_samples: int
    skipped: Dict[str, str]

    def to_dict(self):
        return {"config_hash": self.config_hash,
                "results": {m: asdict(r) for m, r in self.results.items()},
                "timings": self.timings, "n_train_samples": self.n_train_samples,
                "skipped": self.skipped}


@dataclass
class Benchmark:
    """Trained models plus the test sequences they are evaluated on."""

    config: PipelineConfig
    train_records: List[SequenceRecord]
    test_records: List[SequenceRecord]
    agr: object = None
    ar: object = None
    timings: Dict[str, float] = field(default_factory=dict)
    n_train_samples: int = 0

    @classmethod
    def prepare(cls, root, config: Optional[PipelineConfig] = None, train_seeds=TRAIN_SEEDS,
                test_seeds=TEST_SEEDS, scene: Optional[dict] = None) -> "Benchmark":
        config = config or benchmark_config()
        t0 = time.perf_counter()
        train = [ensure_sequence(root, s, scene) for s in train_seeds]
        test = [ensure_sequence(root, s, scene) for s in test_seeds]
        t1 = time.perf_counter()
        ts = collect_training(train, config)
        t2 = time.perf_counter()
        agr, ar = train_models(ts, config)
        t3 = time.perf_counter()
        timings = {"render_s": t1 - t0, "train_features_s": t2 - t1, "fit_s": t3 - t2}
        return cls(config, train, test, agr, ar, timings, len(ts.ids))

    def detect(self, modes=MODES, perturbation: Optional[Perturbation] = None) -> Detections:
        return detect_all(self.test_records, self.agr, self.ar, self.config, modes, perturbation)

    def evaluate(self, det: Detections, fpr_target: float = 0.02) -> Dict[str, OperatingPoint]:
        return {m: operating_point(det.maps[m], det.gts, fpr_target) for m in det.maps}

    def run(self, fpr_target: float = 0.02) -> BenchmarkReport:
        det = self.detect()
        timings = dict(self.timings, detect_s=det.seconds)
        return BenchmarkReport(self.config.hash, self.evaluate(det, fpr_target), timings,
                               self.n_train_samples, det.skipped)


def main(argv=None):
    p = argparse.ArgumentParser(description="Synthetic end-to-end benchmark.")
    p.add_argument("--root", required=True, help="sequence cache directory")
    p.add_argument("--n-test", type=int, default=len(TEST_SEEDS))
    p.add_argument("--robustness", action="store_true", help="add noise and blur runs")
    p.add_argument("--out", help="write the JSON report here")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    bench = Benchmark.prepare(args.root, test_seeds=range(args.n_test))
    report = bench.run().to_dict()
    if args.robustness:
        runs = {"odometry_noise": Perturbation(0.05, 0.011, seed=1)}
        runs.update({f"blur_{k}": Perturbation(blur_kernel=k, seed=2) for k in (11, 15, 19)})
        report["robustness"] = {name: asdict(bench.evaluate(bench.detect(("agfm",), pert))["agfm"])
                                for name, pert in runs.items()}
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


if __name__ == "__main__":
    main()
