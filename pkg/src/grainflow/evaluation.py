"""Detection and counting metrics.

Precision, recall, AP at IoU 0.5, and count-accuracy rows. Matching is
greedy in descending confidence; AP uses all-point interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .core import BBox, Detection, iou


@dataclass(frozen=True)
class DetectionEvalResult:
    precision: float
    recall: float
    ap50: float
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("precision", "recall", "ap50"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.tp + self.fp > 0:
            expected = self.tp / (self.tp + self.fp)
            if abs(self.precision - expected) > 1e-12:
                raise ValueError("precision inconsistent with tp/fp")
        if self.tp + self.fn > 0:
            expected = self.tp / (self.tp + self.fn)
            if abs(self.recall - expected) > 1e-12:
                raise ValueError("recall inconsistent with tp/fn")


def _match_flags(
    preds: Sequence[Detection],
    gts: Sequence[BBox],
    iou_threshold: float,
) -> List[bool]:
    """Per-prediction TP flags, greedy in descending confidence.

    Each ground-truth box is claimed at most once; a prediction is a
    true positive when its best unclaimed box reaches the threshold.
    """
    order = sorted(
        range(len(preds)), key=lambda i: (-preds[i].confidence, i)
    )
    claimed = [False] * len(gts)
    flags = [False] * len(preds)
    for i in order:
        best_j = -1
        best_iou = 0.0
        for j, g in enumerate(gts):
            if claimed[j]:
                continue
            v = iou(preds[i].bbox, g)
            if v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            claimed[best_j] = True
            flags[i] = True
    return flags


def match_detections(
    preds: Sequence[Detection],
    gts: Sequence[BBox],
    iou_threshold: float = 0.5,
) -> Tuple[int, int, int]:
    """Return (tp, fp, fn) for one image."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    flags = _match_flags(preds, gts, iou_threshold)
    tp = sum(flags)
    return tp, len(preds) - tp, len(gts) - tp


def average_precision_50(
    samples: Sequence[Tuple[Sequence[Detection], Sequence[BBox]]],
    iou_threshold: float = 0.5,
) -> float:
    """Area under the interpolated precision-recall curve.

    samples holds (predictions, ground-truth boxes) per image; at least
    one ground-truth box must exist across the set.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    total_gt = sum(len(gts) for _, gts in samples)
    if total_gt == 0:
        raise ValueError("cannot compute AP with zero ground-truth boxes")
    confs: List[float] = []
    flags: List[bool] = []
    for preds, gts in samples:
        image_flags = _match_flags(preds, gts, iou_threshold)
        confs.extend(d.confidence for d in preds)
        flags.extend(image_flags)
    if not confs:
        return 0.0
    order = np.lexsort((np.arange(len(confs)), -np.asarray(confs)))
    tp_flags = np.asarray(flags, dtype=np.float64)[order]
    tp_cum = np.cumsum(tp_flags)
    ranks = np.arange(1, len(tp_flags) + 1, dtype=np.float64)
    recall = tp_cum / total_gt
    precision = tp_cum / ranks
    # monotone envelope from the right, then sum rectangle areas
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * envelope))


def evaluate_detections(
    samples: Sequence[Tuple[Sequence[Detection], Sequence[BBox]]],
    iou_threshold: float = 0.5,
) -> DetectionEvalResult:
    """Aggregate precision/recall over all images plus AP."""
    tp = fp = fn = 0
    for preds, gts in samples:
        a, b, c = match_detections(preds, gts, iou_threshold)
        tp, fp, fn = tp + a, fp + b, fn + c
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    ap50 = average_precision_50(samples, iou_threshold)
    return DetectionEvalResult(
        precision=precision, recall=recall, ap50=ap50, tp=tp, fp=fp, fn=fn
    )


def counting_report(count: int, actual: int, unique_ids: int) -> str:
    """One table row: actual, measured count, accuracy to one decimal,
    and the unique-id tally."""
    if actual <= 0:
        raise ValueError("actual must be positive")
    if count < 0 or unique_ids < 0:
        raise ValueError("count and unique_ids must be >= 0")
    accuracy = 100.0 * count / actual
    return (
        f"actual={actual} count={count} "
        f"accuracy={accuracy:.1f} unique_ids={unique_ids}"
    )


def detection_eval_table(result: DetectionEvalResult) -> str:
    """Human-readable summary plus machine-readable key=value lines."""
    lines = [
        f"{'Precision':>10} {'Recall':>10} {'AP50':>10}",
        f"{result.precision:>10.4f} {result.recall:>10.4f} {result.ap50:>10.4f}",
        f"tp={result.tp}",
        f"fp={result.fp}",
        f"fn={result.fn}",
        f"precision={result.precision:.6f}",
        f"recall={result.recall:.6f}",
        f"ap50={result.ap50:.6f}",
    ]
    return "\n".join(lines) + "\n"
