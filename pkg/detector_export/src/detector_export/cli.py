"""Command line entry points: train a detector, export detections.

Exit codes follow the toolkit convention: 0 success, 2 usage error,
3 data error.
"""
import argparse
import sys
from dataclasses import fields, replace

from .infer import export_detections
from .train import TrainSpec, train

_USAGE_ERROR = 2
_DATA_ERROR = 3


def _parse_input_size(text: str):
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"input size must look like 320x320x3, got {text!r}"
        )
    return tuple(int(p) for p in parts)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detector-export",
        description="Seed detector training and detection/embedding export.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the detector on a composed dataset")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--weights", required=True, metavar="FILE")
    p.add_argument("--log", required=True, metavar="FILE")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--input-size", type=_parse_input_size, metavar="HxWxC")
    p.add_argument("--conf-threshold", type=float)
    p.add_argument("--nms-threshold", type=float)
    p.add_argument("--iou-threshold", type=float)
    p.add_argument("--pretrained", help="pretrained weights id or path")
    p.add_argument("--seed", type=int, help="training rng seed")

    p = sub.add_parser("export", help="run inference and write both files")
    p.add_argument("--weights", required=True, metavar="FILE")
    p.add_argument("--source", required=True, metavar="PATH",
                   help="image directory or video file")
    p.add_argument("--det", required=True, metavar="FILE",
                   help="detection text output")
    p.add_argument("--emb", required=True, metavar="FILE",
                   help="embedding sidecar output")
    p.add_argument("--fps", type=float,
                   help="sampling rate for video sources")
    return parser


def _spec_from_args(args) -> TrainSpec:
    overrides = {
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "input_size": args.input_size,
        "confidence_threshold": args.conf_threshold,
        "nms_threshold": args.nms_threshold,
        "iou_threshold": args.iou_threshold,
        "pretrained": args.pretrained,
        "rng_seed": args.seed,
    }
    spec = TrainSpec()
    present = {k: v for k, v in overrides.items() if v is not None}
    return replace(spec, **present) if present else spec


def _cmd_train(args) -> int:
    spec = _spec_from_args(args)
    for f in fields(spec):
        print(f"{f.name} = {getattr(spec, f.name)}")
    result = train(args.data, spec, args.weights, args.log)
    for cid, recall in result.per_class_recall.items():
        print(f"validation recall class {cid}: {recall:.4f}")
    print(f"weights written to {result.weights_path}")
    print(f"log written to {result.log_path}")
    return 0


def _cmd_export(args) -> int:
    summary = export_detections(
        args.source, args.weights, args.det, args.emb, fps=args.fps
    )
    print(
        f"frames={summary.n_frames} detections={summary.n_detections} "
        f"det={summary.detections_path} emb={summary.embeddings_path}"
    )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return _USAGE_ERROR if exc.code not in (0, None) else 0
    handler = {"train": _cmd_train, "export": _cmd_export}[args.command]
    try:
        return handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
