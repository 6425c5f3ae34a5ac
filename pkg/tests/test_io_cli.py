import json
import math

import numpy as np
import pytest
from PIL import Image

from reflectobs import synth
from reflectobs.cli import main
from reflectobs.errors import CountMismatch, InsufficientMotion, MalformedRow, MissingFile
from reflectobs.geometry import CameraIntrinsics, Extrinsics
from reflectobs.io import OdometryPose, load_sequence, select_frame_interval, write_sequence
from reflectobs.pipeline import PipelineConfig
from reflectobs.probmap import load_map_png


def tiny_sequence(root, xs, labels=True, size=(64, 48)):
    w, h = size
    k = CameraIntrinsics(60.0, 60.0, (w - 1) / 2, (h - 1) / 2, w, h)
    ext = Extrinsics.looking_forward(0.5, math.radians(20.0))
    rng = np.random.default_rng(0)
    frames = [rng.uniform(size=(h, w, 3)) for _ in xs]
    lab = {i: np.ones((h, w), dtype=np.int64) for i in range(len(xs))} if labels else None
    return write_sequence(root, frames, [(x, 0.0, 0.0) for x in xs], k, ext, lab)


# -- sequence loading ---------------------------------------------------------


def test_sequence_round_trip(tmp_path):
    root = tiny_sequence(tmp_path / "s", [0.0, 0.1, 0.2])
    rec = load_sequence(root)
    assert len(rec) == 3 and rec.annotated == [0, 1, 2]
    assert rec.poses[2] == OdometryPose("000002", 0.2, 0.2, 0.0, 0.0)
    assert rec.image(1).shape == (48, 64, 3)
    assert np.array_equal(rec.label_image(0), np.ones((48, 64)))
    assert rec.ground_plane().d == pytest.approx(0.5)


def test_malformed_row_reports_line(tmp_path):
    root = tiny_sequence(tmp_path / "s", [0.0, 0.1, 0.2])
    lines = (root / "poses.csv").read_text().splitlines()
    lines[3] = lines[3].replace("0.2", "abc", 1)
    (root / "poses.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedRow) as exc:
        load_sequence(root)
    assert exc.value.line == 4 and ":4:" in str(exc.value)


def test_decreasing_timestamps_rejected(tmp_path):
    root = tiny_sequence(tmp_path / "s", [0.0, 0.1])
    text = (root / "poses.csv").read_text().replace("000001,0.1", "000001,-0.1")
    (root / "poses.csv").write_text(text)
    with pytest.raises(MalformedRow):
        load_sequence(root)


def test_missing_files_and_counts(tmp_path):
    with pytest.raises(MissingFile):
        load_sequence(tmp_path / "nope")
    root = tiny_sequence(tmp_path / "s", [0.0, 0.1])
    (root / "frames" / "000001.png").unlink()
    with pytest.raises(CountMismatch):
        load_sequence(root)


def test_labels_are_optional(tmp_path):
    rec = load_sequence(tiny_sequence(tmp_path / "s", [0.0, 0.1], labels=False))
    assert rec.annotated == []


def test_frame_interval_selection(tmp_path):
    xs = [0.05 * i for i in range(12)]
    rec = load_sequence(tiny_sequence(tmp_path / "s", xs, labels=False))
    # 0.05 m per frame: four steps reach exactly 0.2 m, which does not exceed it
    assert select_frame_interval(rec, 10, 0.2) == 5
    assert select_frame_interval(rec, 10, 0.0) == 1
    with pytest.raises(InsufficientMotion):
        select_frame_interval(rec, 3, 0.2)
    still = load_sequence(tiny_sequence(tmp_path / "still", [0.0] * 4, labels=False))
    with pytest.raises(InsufficientMotion):
        select_frame_interval(still, 3, 0.0)


# -- command line -------------------------------------------------------------

FAST = dict(n_trees=4, max_depth=8, scales=(16, 24, 32), stride=8, kappa=0.75, lk_window=11,
            edge_min_response=0.3, top_j=300)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Two small synthetic sequences, a config and trained models."""
    base = tmp_path_factory.mktemp("cli")
    seqs = []
    for seed in (1, 2):
        spec = synth.random_scene(seed, n_frames=2, step_m=0.22, width=160, height=96, n_obstacles=(1, 2),
                                  obstacle_distance=(0.9, 1.4))
        seqs.append(str(synth.write_synthetic_sequence(spec, base / f"seq{seed}", supersample=1)))
    cfg = PipelineConfig(**FAST)
    (base / "config.json").write_text(json.dumps(cfg.to_dict()))
    code = main(["train", *seqs, "--out", str(base / "models"), "--config",
                 str(base / "config.json")])
    assert code == 0
    return base, seqs, cfg


def test_unknown_flag_exits_one(tmp_path, capsys):
    assert main(["detect", "--bogus"]) == 1
    assert main(["nosuchcommand"]) == 1


def test_missing_input_exits_one(tmp_path):
    assert main(["eval", "--sequence", str(tmp_path / "x"), "--pred", str(tmp_path),
                 "--out", str(tmp_path / "o.json")]) == 1


def test_train_outputs(workspace):
    base, _, cfg = workspace
    models = base / "models"
    for name in ("features.csv", "agr.json", "ar.json", "config.json"):
        assert (models / name).is_file()
    assert PipelineConfig.load(models / "config.json").hash == cfg.hash
    assert cfg.hash in (models / "features.csv").read_text().splitlines()[0]


def test_detect_eval_roc(workspace):
    base, seqs, cfg = workspace
    out = base / "det"
    assert main(["detect", seqs[0], "--models", str(base / "models"), "--out", str(out),
                 "--threshold", "0.3", "--dump-intermediates"]) == 0
    rec = load_sequence(seqs[0])
    fid = rec.poses[1].frame_id
    report = json.loads((out / "detect.json").read_text())
    assert report["config_hash"] == cfg.hash and report["frames"] == [fid]
    prob = load_map_png(out / f"map_{fid}.png")
    assert prob.shape == (96, 160) and 0 <= prob.min() and prob.max() <= 1
    with Image.open(out / f"mask_{fid}.png") as im:
        assert im.info["config_hash"] == cfg.hash
        mask = np.asarray(im) > 0
    # the map PNG is quantized to 1/65535, so compare away from the threshold
    clear = np.abs(prob - 0.3) > 1e-4
    assert np.array_equal(mask[clear], prob[clear] >= 0.3)
    for name in (f"edges_{fid}.png", f"proposals_{fid}.json", f"parallax_{fid}.json"):
        assert (out / name).is_file()
    par = json.loads((out / f"parallax_{fid}.json").read_text())
    assert par["q"] == 1 and len(par["homography"]) == 3

    assert main(["eval", "--sequence", seqs[0], "--pred", str(out), "--out",
                 str(base / "eval.json")]) == 0
    summary = json.loads((base / "eval.json").read_text())
    assert {"itpr", "mifp", "tpr", "fpr", "threshold", "config_hash"} <= set(summary)
    assert main(["roc", "--sequence", seqs[0], "--pred", str(out), "--out",
                 str(base / "roc")]) == 0
    lines = (base / "roc" / "roc.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and len(lines) == 65536 + 2
    op = json.loads((base / "roc" / "operating_point.json").read_text())
    assert op["fpr"] <= 0.02


def test_injected_proposals_reproduce_detection(workspace):
    base, seqs, _ = workspace
    ref, inj = base / "ref", base / "inj"
    assert main(["detect", seqs[1], "--models", str(base / "models"), "--out", str(ref),
                 "--dump-intermediates"]) == 0
    rec = load_sequence(seqs[1])
    fid = rec.poses[1].frame_id
    dumped = json.loads((ref / f"proposals_{fid}.json").read_text())["proposals"]
    (base / "props.json").write_text(json.dumps(dumped))
    assert main(["detect", seqs[1], "--models", str(base / "models"), "--out", str(inj),
                 "--inject-proposals", str(base / "props.json")]) == 0
    a, b = load_map_png(ref / f"map_{fid}.png"), load_map_png(inj / f"map_{fid}.png")
    assert np.array_equal(a, b)


def test_injected_edges_are_used(workspace):
    base, seqs, _ = workspace
    edges = base / "blank_edges"
    edges.mkdir()
    rec = load_sequence(seqs[0])
    for p in rec.poses:
        Image.fromarray(np.zeros((96, 160), dtype=np.uint8)).save(edges / f"{p.frame_id}.png")
    out = base / "blank"
    assert main(["detect", seqs[0], "--models", str(base / "models"), "--out", str(out),
                 "--inject-edges", str(edges), "--dump-intermediates"]) == 0
    fid = rec.poses[1].frame_id
    assert json.loads((out / f"parallax_{fid}.json").read_text())["points"] == []
    assert main(["detect", seqs[0], "--models", str(base / "models"), "--out", str(out),
                 "--inject-edges", str(base / "missing")]) == 1


def test_seed_flag_changes_hash(workspace, tmp_path):
    base, seqs, cfg = workspace
    assert main(["detect", seqs[0], "--models", str(base / "models"), "--out", str(tmp_path),
                 "--seed", "9"]) == 0
    report = json.loads((tmp_path / "detect.json").read_text())
    assert report["config_hash"] != cfg.hash


def test_calibrate_cli(tmp_path, intrinsics, mount, floor):
    from reflectobs.geometry import ground_homography
    from conftest import random_planar_pair

    rng = np.random.default_rng(3)
    pose_t, pose_p = random_planar_pair(rng, mount)
    h = ground_homography(pose_t, pose_p, floor, intrinsics)
    src = np.column_stack([rng.uniform(0, 640, 12), rng.uniform(200, 360, 12)])
    dst = h.transfer(src)
    (tmp_path / "pairs.json").write_text(json.dumps({"src": src.tolist(), "dst": dst.tolist()}))
    (tmp_path / "k.json").write_text(json.dumps(intrinsics.to_dict()))
    assert main(["calibrate", "--pairs", str(tmp_path / "pairs.json"), "--intrinsics",
                 str(tmp_path / "k.json"), "--height", "0.6", "--out",
                 str(tmp_path / "ground.json")]) == 0
    report = json.loads((tmp_path / "ground.json").read_text())
    assert "config_hash" in report


def test_synth_cli(tmp_path):
    assert main(["synth", "--seed", "4", "--frames", "2", "--supersample", "1", "--out",
                 str(tmp_path / "s")]) == 0
    rec = load_sequence(tmp_path / "s")
    assert len(rec) == 2 and rec.annotated == [0, 1]
