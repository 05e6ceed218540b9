"""Command line front end.

Subcommands cover the full pipeline: simulate detection streams,
generate training images, run a tracker over a detection file, count
line crossings, and score detections against ground truth.

Exit codes: 0 success, 2 usage or configuration error, 3 unreadable or
malformed data file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .core import BBox
from .counting import RoiCounter
from .dataset_gen import generate_dataset, make_ellipse_sprite
from .evaluation import detection_eval_table, evaluate_detections
from .io_formats import (
    attach_embeddings,
    read_detection_stream,
    read_embedding_sidecar,
    write_detection_records,
    write_detection_stream,
    write_ground_truth_records,
    write_key_value,
)
from .io_formats import DetectionFileRecord
from .run_config import ConfigError, RunConfig
from .simulator import (
    clustering_scenario,
    fragmentation_scenario,
    occlusion_scenario,
    perfect_scenario,
    simulate,
)
from .tracking import Tracker

_PROFILES = ("default", "perfect", "clustering", "fragmentation", "occlusion")

USAGE_ERROR = 2
DATA_ERROR = 3


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key=value config file")
    p.add_argument("--seed", type=int, help="RNG seed override")
    p.add_argument("--fps", type=float, help="frame rate override")


def _add_tracker_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--algorithm",
        choices=("bytetrack", "strongsort"),
        help="tracker algorithm override",
    )
    p.add_argument("--tau-high", type=float, help="high confidence threshold")
    p.add_argument("--tau-low", type=float, help="low confidence threshold")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grainflow",
        description="Seed kernel tracking and counting pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic detection stream")
    _add_common_flags(p)
    p.add_argument(
        "--profile",
        choices=_PROFILES,
        default="default",
        help="noise profile; rng_seed, fps, and seed count always come "
        "from flags or the config file",
    )
    p.add_argument("--seeds", type=int, help="number of seeds to spawn")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("gen-dataset", help="compose annotated training images")
    _add_common_flags(p)
    p.add_argument("--images", type=int, help="number of images")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("track", help="assign track ids to a detection file")
    _add_common_flags(p)
    _add_tracker_flags(p)
    p.add_argument("detections", metavar="DETECTIONS")
    p.add_argument("--emb", metavar="FILE", help="embedding sidecar")
    p.add_argument("--out", required=True, metavar="FILE")

    p = sub.add_parser("count", help="count line crossings in a detection file")
    _add_common_flags(p)
    _add_tracker_flags(p)
    p.add_argument("detections", metavar="DETECTIONS")
    p.add_argument("--emb", metavar="FILE", help="embedding sidecar")
    p.add_argument("--actual", type=int, help="true kernel count, enables accuracy")
    p.add_argument("--line-pos", type=float, help="counting line position, fraction of height")
    p.add_argument("--frame-height", type=float, help="frame height in pixels")
    p.add_argument("--out", metavar="FILE", help="write the report here too")

    p = sub.add_parser("eval", help="score detections against ground truth")
    _add_common_flags(p)
    p.add_argument("predictions", metavar="PREDICTIONS")
    p.add_argument("ground_truth", metavar="GROUND_TRUTH")
    p.add_argument("--iou", type=float, help="match threshold override")

    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg.apply_file(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("rng_seed must be >= 0")
        cfg.set_value("rng_seed", args.seed)
    if args.fps is not None:
        if args.fps <= 0:
            raise ConfigError("fps must be positive")
        cfg.set_value("fps", args.fps)
    if getattr(args, "algorithm", None) is not None:
        cfg.set_value("algorithm", args.algorithm)
    if getattr(args, "tau_high", None) is not None:
        cfg.set_value("tau_high", args.tau_high)
    if getattr(args, "tau_low", None) is not None:
        cfg.set_value("tau_low", args.tau_low)
    if getattr(args, "line_pos", None) is not None:
        cfg.set_value("position_norm", args.line_pos)
    if getattr(args, "seeds", None) is not None:
        cfg.set_value("n_seeds", args.seeds)
    if getattr(args, "images", None) is not None:
        cfg.set_value("n_images", args.images)
    return cfg


def _echo_config(cfg: RunConfig) -> None:
    """Full effective configuration, for reproducing the run."""
    for key, value in cfg.echo().items():
        print(f"{key}={value}", file=sys.stderr)


def _scenario_for_profile(cfg: RunConfig, profile: str):
    if profile == "default":
        return cfg.scenario()
    base = cfg.scenario()
    if profile == "perfect":
        return perfect_scenario(base.rng_seed, base.fps, base.n_seeds)
    if profile == "clustering":
        return clustering_scenario(base.rng_seed, base.fps, base.n_seeds)
    if profile == "fragmentation":
        return fragmentation_scenario(base.rng_seed, base.fps, n_seeds=base.n_seeds)
    if profile == "occlusion":
        return occlusion_scenario(base.rng_seed, base.fps, base.n_seeds)
    raise ConfigError(f"unknown profile {profile!r}")


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    scenario = _scenario_for_profile(cfg, args.profile)
    _echo_config(cfg)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    gt, stream = simulate(scenario)
    write_detection_stream(stream, out_dir / "detections.txt")
    write_ground_truth_records(gt, out_dir / "ground_truth.txt")
    write_key_value(cfg.echo(), out_dir / "run_config.txt")
    print(
        f"wrote {out_dir / 'detections.txt'} "
        f"({gt.n_frames} frames, profile={args.profile})"
    )
    print(f"true_count={gt.true_count}")
    return 0


def _cmd_gen_dataset(args) -> int:
    cfg = _load_config(args)
    spec = cfg.dataset_spec()
    _echo_config(cfg)

    sprites = tuple(
        make_ellipse_sprite(class_id=class_id) for class_id in spec.classes
    )
    manifest = generate_dataset(sprites, spec, Path(args.out))
    n_train = len(manifest.train_entries)
    n_val = len(manifest.val_entries)
    print(f"wrote {n_train + n_val} images ({n_train} train, {n_val} val)")
    return 0


def _load_stream(args, cfg: RunConfig):
    stream = read_detection_stream(args.detections, fps=cfg.get("fps"))
    if getattr(args, "emb", None):
        sidecar = read_embedding_sidecar(args.emb)
        stream = attach_embeddings(stream, sidecar)
    return stream


def _cmd_track(args) -> int:
    cfg = _load_config(args)
    tracker_cfg = cfg.tracker_config()
    _echo_config(cfg)

    stream = _load_stream(args, cfg)
    tracker = Tracker(tracker_cfg.scaled_for_fps(stream.fps))
    records = []
    for frame in stream.frames:
        tracker.step(frame)
        for track in tracker.live_tracks:
            if track.frames_since_update != 0:
                continue
            x, y, w, h = track.predicted_xywh()
            records.append(
                DetectionFileRecord(
                    frame_index=frame.frame_index,
                    track_id=track.id,
                    bbox=BBox(x, y, w, h),
                    confidence=1.0,
                    class_id=track.class_id,
                )
            )
    write_detection_records(records, args.out)
    print(f"wrote {args.out}")
    print(f"tracks={tracker.unique_id_count}")
    return 0


def _cmd_count(args) -> int:
    cfg = _load_config(args)
    if args.actual is not None and args.actual <= 0:
        raise ConfigError("actual must be positive")
    tracker_cfg = cfg.tracker_config()
    line = cfg.roi_line()
    frame_height = (
        args.frame_height if args.frame_height is not None else cfg.get("frame_h")
    )
    if frame_height <= 0:
        raise ConfigError("frame height must be positive")
    _echo_config(cfg)

    stream = _load_stream(args, cfg)
    tracker = Tracker(tracker_cfg.scaled_for_fps(stream.fps))
    counter = RoiCounter()
    for frame in stream.frames:
        tracker.step(frame)
        counter.observe_frame(tracker.live_tracks, line, frame_height)
    report = counter.finalize(tracker.all_tracks, actual_count=args.actual)

    lines = []
    for class_id in sorted(report.per_class_counts):
        lines.append(f"class_{class_id}={report.per_class_counts[class_id]}")
    final = f"count={report.total_count} unique_ids={report.unique_ids}"
    if report.accuracy_pct is not None:
        final += f" accuracy={report.accuracy_pct:.1f}"
    lines.append(final)
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    threshold = args.iou if args.iou is not None else 0.5
    if not 0.0 < threshold <= 1.0:
        raise ConfigError("iou threshold must be in (0, 1]")
    _echo_config(cfg)

    preds = read_detection_stream(args.predictions, fps=cfg.get("fps"))
    gts = read_detection_stream(args.ground_truth, fps=cfg.get("fps"))
    n_frames = max(len(preds.frames), len(gts.frames))
    samples = []
    for i in range(n_frames):
        pred_dets = preds.frames[i].detections if i < len(preds.frames) else ()
        gt_dets = gts.frames[i].detections if i < len(gts.frames) else ()
        samples.append((pred_dets, tuple(d.bbox for d in gt_dets)))
    result = evaluate_detections(samples, iou_threshold=threshold)
    sys.stdout.write(detection_eval_table(result))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "gen-dataset": _cmd_gen_dataset,
    "track": _cmd_track,
    "count": _cmd_count,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)

    handler = _COMMANDS[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
