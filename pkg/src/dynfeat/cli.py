"""Command-line entry point.

Exit codes: 0 success, 1 format/config/shape errors, 2 tracking loss.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import dump_config, load_config
from .dataset import Dataset
from .errors import ConfigError, DynFeatError, FormatError, ShapeError, TrackingLost
from .evaluation import evaluate
from .pipeline import classify_frame, run_pipeline
from .segmentation import SegmentStatus
from .simulator import SceneConfig, build_scene, write_dataset
from .tracking import classify_quasi

EXIT_OK, EXIT_FORMAT, EXIT_LOST = 0, 1, 2

# grey levels for the per-pixel label image
_LABEL_LEVELS = {SegmentStatus.STATIC: 0, SegmentStatus.DYNAMIC_FLOW: 128, SegmentStatus.DYNAMIC_MOVABLE: 255}


def cmd_simulate(args):
    try:
        config = SceneConfig.model_validate_json(Path(args.scene).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scene config: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = write_dataset(build_scene(config), args.outdir)
    print(f"wrote {manifest['n_frames']} frames to {args.outdir}")
    return EXIT_OK


def cmd_classify(args):
    ds = Dataset(args.manifest)
    if not 1 <= args.frame < ds.n_frames:
        raise FormatError(f"--frame must be in [1, {ds.n_frames - 1}]")
    config = load_config(args.config)
    frame = ds.frame(args.frame)
    result = classify_frame(frame, config)
    out = Path(args.out or ds.root / "classify" / f"{args.frame:06d}")
    out.mkdir(parents=True, exist_ok=True)
    formats.write_pgm(out / "boundary.pgm", np.rint(255 * result.boundary.values).astype(np.uint8))
    formats.write_pgm(out / "binary.pgm", 255 * result.boundary.binary.astype(np.uint8))
    levels = np.array([_LABEL_LEVELS[s] for s in result.labels.status], dtype=np.uint8)
    formats.write_pgm(out / "labels.pgm", levels[frame.segments.ids])
    quasi = classify_quasi(frame.matches, result.labels)
    payload = {
        "frame": args.frame,
        "segments": result.labels.to_dict(),
        "motion_regions": [{"area": r.area, "bbox": list(map(int, r.bbox))} for r in result.regions],
        "quasi_dynamic_ids": [int(i) for i in frame.matches.ids[quasi]],
    }
    (out / "labels.json").write_text(json.dumps(payload, indent=1) + "\n")
    print(f"frame {args.frame}: {len(result.labels.dynamic_ids())} dynamic segments -> {out}")
    return EXIT_OK


def cmd_track(args):
    ds = Dataset(args.manifest)
    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.json")
    result = run_pipeline(ds, config)
    formats.write_trajectory(out / "trajectory.txt", result.trajectory)
    (out / "diagnostics.json").write_text(
        json.dumps([d.to_dict() for d in result.diagnostics], indent=1) + "\n"
    )
    print(f"tracked {len(result.trajectory)} poses -> {out}")
    if result.lost_frames:
        print(f"tracking lost in frames {result.lost_frames}", file=sys.stderr)
        return EXIT_LOST
    return EXIT_OK


def cmd_evaluate(args):
    est = formats.read_trajectory(args.est)
    gt = formats.read_trajectory(args.gt)
    report = evaluate(est, gt, delta=args.delta, max_dt=args.max_dt)
    out = Path(args.out) if args.out else Path(args.est).parent
    report.write(out)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_verify(args):
    ds = Dataset(args.manifest)
    bad = ds.verify()
    if bad:
        for rel in bad:
            print(f"checksum mismatch: {rel}", file=sys.stderr)
        return EXIT_FORMAT
    print(f"{len(ds.referenced_files())} files verified")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynfeat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic scene to a dataset directory")
    p.add_argument("scene", help="scene configuration JSON")
    p.add_argument("outdir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("classify", help="boundary maps and segment labels for one frame")
    p.add_argument("manifest")
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("track", help="estimate the camera trajectory of a dataset")
    p.add_argument("manifest")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="ATE/RTE of an estimated trajectory")
    p.add_argument("est")
    p.add_argument("gt")
    p.add_argument("--delta", type=int)
    p.add_argument("--max-dt", type=float, default=0.02)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="check dataset checksums")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrackingLost as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOST
    except (FormatError, ConfigError, ShapeError, DynFeatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
