"""Command-line driver: ``reflectobs {calibrate,synth,train,detect,eval,roc}``.

Exit status is 0 on success, 1 for invalid input (including usage errors)
and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from . import synth
from .errors import ValidationError
from .evaluation import roc, split_labels, summarize, summary_json
from .flow import InjectedFlow
from .geometry import CameraIntrinsics, calibrate_ground_report
from .io import load_sequence
from .model import RegressionForest
from .pipeline import PipelineConfig, Providers, collect_training, run_detect, train_models
from .probmap import load_map_png, save_map_png, segment
from .proposals import load_edge_png, load_proposals, proposals_to_json, save_edge_png

log = logging.getLogger("reflectobs")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _png_info(config_hash: str) -> PngInfo:
    info = PngInfo()
    info.add_text("config_hash", config_hash)
    return info


def _write_json(path: Path, data, config_hash: str):
    data = dict(data)
    data["config_hash"] = config_hash
    path.write_text(json.dumps(data, indent=1, sort_keys=True))


def _load_config(args, fallback: Optional[Path] = None) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.load(args.config)
    elif fallback is not None and fallback.is_file():
        cfg = PipelineConfig.load(fallback)
    else:
        cfg = PipelineConfig()
    if args.seed is not None:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


# --------------------------------------------------------------------------
# Subcommands


def cmd_calibrate(args) -> int:
    """``pairs.json``: ``{"src": [[u, v], ...], "dst": [[u, v], ...]}``."""
    cfg = _load_config(args)
    pairs = json.loads(Path(args.pairs).read_text())
    k = CameraIntrinsics.from_dict(json.loads(Path(args.intrinsics).read_text()))
    report = calibrate_ground_report(pairs["src"], pairs["dst"], k, args.height)
    _write_json(Path(args.out), report.to_dict(), cfg.hash)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    if args.spec:
        spec = synth.SceneSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        seed = cfg.seed if args.seed is None else args.seed
        spec = synth.random_scene(seed, n_frames=args.frames, step_m=args.step)
    synth.write_synthetic_sequence(spec, args.out, supersample=args.supersample)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = [load_sequence(p) for p in args.sequences]
    ts = collect_training(records, cfg)
    if not ts.y:
        raise ValidationError("no annotated floor proposals to train on")
    ts.write_csv(out / "features.csv", cfg.hash)
    agr, ar = train_models(ts, cfg)
    agr.save(out / "agr.json", cfg.hash)
    ar.save(out / "ar.json", cfg.hash)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    log.info("trained on %d samples, config %s", len(ts.ids), cfg.hash)
    return EXIT_OK


def _per_frame(path: Optional[str], suffix: str, loader):
    """Provider from a single file or a directory of ``<frame_id><suffix>`` files."""
    if path is None:
        return None
    p = Path(path)
    if p.is_file():
        return lambda frame_id: loader(p)
    if not p.is_dir():
        raise ValidationError(f"injection path {p} does not exist")
    return lambda frame_id: loader(p / f"{frame_id}{suffix}")


def cmd_detect(args) -> int:
    models = Path(args.models)
    cfg = _load_config(args, models / "config.json")
    rec = load_sequence(args.sequence)
    agr = RegressionForest.load(models / "agr.json")
    ar = RegressionForest.load(models / "ar.json")
    size = (rec.intrinsics.width, rec.intrinsics.height)
    ids = [p.frame_id for p in rec.poses]

    edges = _per_frame(args.inject_edges, ".png", load_edge_png)
    props = _per_frame(args.inject_proposals, ".json", lambda f: load_proposals(f, size))
    flows = _per_frame(args.inject_flow, ".json", InjectedFlow.from_file)
    if args.frames:
        frames = [int(f) for f in args.frames.split(",")]
    else:
        frames = rec.annotated or list(range(1, len(rec)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    skipped = {}
    for t in frames:
        if not 0 <= t < len(rec):
            raise ValidationError(f"frame {t} outside the sequence")
        providers = Providers(
            edges=(lambda i: edges(ids[i])) if edges else None,
            proposals=(lambda i: props(ids[i])) if props else None,
            flow=flows(ids[t]) if flows else None,
        )
        results, masks, skip = run_detect(rec, agr, ar, cfg, [t], args.threshold, providers,
                                          keep_features=args.dump_intermediates)
        skipped.update(skip)
        for res in results:
            fid = ids[res.frame]
            save_map_png(out / f"map_{fid}.png", res.prob["agfm"], cfg.tau_b, args.threshold,
                         cfg.hash)
            if res.frame in masks:
                Image.fromarray(masks[res.frame].astype(np.uint8) * 255).save(
                    out / f"mask_{fid}.png", pnginfo=_png_info(cfg.hash))
            if args.dump_intermediates:
                _dump(out, fid, res, cfg)
    _write_json(out / "detect.json", {"frames": [ids[t] for t in frames if t not in skipped],
                                      "skipped": {ids[t]: why for t, why in skipped.items()},
                                      "sequence": str(rec.root)}, cfg.hash)
    return EXIT_OK


def _dump(out: Path, fid: str, res, cfg: PipelineConfig):
    ff = res.features
    save_edge_png(out / f"edges_{fid}.png", ff.edges, pnginfo=_png_info(cfg.hash))
    _write_json(out / f"proposals_{fid}.json",
                {"proposals": json.loads(proposals_to_json(ff.proposals)),
                 "scores": [float(v) for v in res.scores["agfm"]],
                 "lambda_region": [float(v) for v in ff.features.lambda_region]}, cfg.hash)
    tr, geo = ff.track, ff.geo
    points = [{"x_t": [float(v) for v in tr.x_t[i]], "a_prev": [float(v) for v in tr.a_prev[i]],
               "g_prev": [float(v) for v in geo.g_prev[i]], "phi": float(geo.phi[i]),
               "theta": float(geo.theta[i]), "lambda": float(geo.lam[i]),
               "track_ok": bool(tr.track_ok[i])} for i in range(len(tr))]
    _write_json(out / f"parallax_{fid}.json",
                {"q": res.q, "homography": ff.homography.h.tolist(), "points": points}, cfg.hash)


def _gather(args):
    """Maps and ground truth of every (sequence, prediction dir) pair."""
    if len(args.sequence) != len(args.pred):
        raise ValidationError("give one --pred directory per --sequence")
    maps, gts, names = [], [], []
    for seq, pred in zip(args.sequence, args.pred):
        rec = load_sequence(seq)
        for t in rec.annotated:
            fid = rec.poses[t].frame_id
            path = Path(pred) / f"map_{fid}.png"
            if not path.is_file():
                continue
            maps.append(load_map_png(path))
            gts.append(split_labels(rec.label_image(t)))
            names.append(f"{Path(seq).name}/{fid}")
    if not maps:
        raise ValidationError("no probability maps match annotated frames")
    return maps, gts, names


def cmd_roc(args) -> int:
    cfg = _load_config(args)
    maps, gts, _ = _gather(args)
    curve = roc(maps, [(f, o) for f, o, _ in gts])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out / "roc.csv", cfg.hash)
    thr, fpr, tpr = curve.operating_point(args.fpr_target)
    _write_json(out / "operating_point.json",
                {"fpr_target": args.fpr_target, "threshold": thr, "fpr": fpr, "tpr": tpr}, cfg.hash)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    maps, gts, _ = _gather(args)
    thr = args.threshold
    if thr is None:
        thr = roc(maps, [(f, o) for f, o, _ in gts]).operating_point(args.fpr_target)[0]
    pc, ic = summarize([segment(m, thr) for m in maps], gts)
    Path(args.out).write_text(summary_json(pc, ic, thr, cfg.hash))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="reflectobs", description="Obstacle detection on reflective floors.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", parents=[common], help="floor plane from marked pairs")
    c.add_argument("--pairs", required=True)
    c.add_argument("--intrinsics", required=True)
    c.add_argument("--height", type=float, required=True, help="camera height in metres")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic sequence")
    s.add_argument("--spec", help="scene JSON; a random scene from --seed if omitted")
    s.add_argument("--frames", type=int, default=3)
    s.add_argument("--step", type=float, default=0.22, help="metres per frame")
    s.add_argument("--supersample", type=int, default=2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[common], help="fit AGR and AR on sequences")
    t.add_argument("sequences", nargs="+")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", parents=[common], help="probability maps for a sequence")
    d.add_argument("sequence")
    d.add_argument("--models", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--frames", help="comma-separated frame indices")
    d.add_argument("--threshold", type=float)
    d.add_argument("--dump-intermediates", action="store_true")
    d.add_argument("--inject-edges")
    d.add_argument("--inject-proposals")
    d.add_argument("--inject-flow")
    d.set_defaults(func=cmd_detect)

    for name, func, help_ in (("eval", cmd_eval, "ITPR/MIFP summary"),
                              ("roc", cmd_roc, "pixel ROC curve")):
        e = sub.add_parser(name, parents=[common], help=help_)
        e.add_argument("--sequence", action="append", required=True)
        e.add_argument("--pred", action="append", required=True)
        e.add_argument("--fpr-target", type=float, default=0.02)
        if name == "eval":
            e.add_argument("--threshold", type=float)
        e.add_argument("--out", required=True)
        e.set_defaults(func=func)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors exit 1, --help exits 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ValueError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"reflectobs {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report, then exit 2
        print(f"reflectobs {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
