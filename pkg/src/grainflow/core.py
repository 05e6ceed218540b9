"""Shared geometry and detection value types.

Axis convention: x grows rightward, y grows downward (image coordinates).
Boxes are axis-aligned, stored as (x_min, y_min, width, height) in pixels.
The measurement-space form used by the motion filter is (cx, cy, a, h)
where a = width / height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box; width and height must be positive and finite."""

    x_min: float
    y_min: float
    width: float
    height: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.width, self.height)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"BBox values must be finite, got {vals}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"BBox width and height must be positive, got "
                f"width={self.width}, height={self.height}"
            )

    @property
    def x_max(self) -> float:
        return self.x_min + self.width

    @property
    def y_max(self) -> float:
        return self.y_min + self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.width / 2.0, self.y_min + self.height / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_cxcyah(self) -> np.ndarray:
        cx, cy = self.center
        return np.array([cx, cy, self.width / self.height, self.height], dtype=np.float64)

    @staticmethod
    def from_cxcyah(vec) -> "BBox":
        cx, cy, a, h = (float(v) for v in vec)
        w = a * h
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def _unchecked_bbox(x_min: float, y_min: float, width: float, height: float) -> BBox:
    """Skip-validation constructor for callers that guarantee the invariants."""
    box = BBox.__new__(BBox)
    object.__setattr__(box, "x_min", x_min)
    object.__setattr__(box, "y_min", y_min)
    object.__setattr__(box, "width", width)
    object.__setattr__(box, "height", height)
    return box


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # cancellation in x_max/y_max can push the ratio a hair past 1
    return min(1.0, inter / (a.area + b.area - inter))


def _box_rows(boxes) -> np.ndarray:
    """(n, 4) float rows from BBoxes, row tuples, or an already-built array."""
    if isinstance(boxes, np.ndarray):
        return np.asarray(boxes, dtype=np.float64)
    return np.asarray(
        [(b.x_min, b.y_min, b.width, b.height) if isinstance(b, BBox) else tuple(b) for b in boxes],
        dtype=np.float64,
    )


def iou_matrix(a_boxes, b_boxes) -> np.ndarray:
    """Pairwise IoU for two box sequences, shape (len(a), len(b)).

    Boxes may be BBox instances, (x_min, y_min, w, h) rows, or an already
    stacked (n, 4) array.
    """
    if len(a_boxes) == 0 or len(b_boxes) == 0:
        return np.zeros((len(a_boxes), len(b_boxes)), dtype=np.float64)
    a = _box_rows(a_boxes)
    b = _box_rows(b_boxes)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[None, :, 0], b[None, :, 1]
    bx2, by2 = bx1 + b[None, :, 2], by1 + b[None, :, 3]
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    np.clip(iw, 0.0, None, out=iw)
    np.clip(ih, 0.0, None, out=ih)
    inter = iw * ih
    areas_a = (a[:, 2] * a[:, 3])[:, None]
    areas_b = (b[:, 2] * b[:, 3])[None, :]
    union = areas_a + areas_b - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    np.clip(out, 0.0, 1.0, out=out)
    return out


@dataclass(frozen=True)
class Detection:
    """One detector output: box, confidence, class, optional appearance vector."""

    bbox: BBox
    confidence: float
    class_id: int = 0
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")
        if self.embedding is not None:
            emb = np.asarray(self.embedding, dtype=np.float32)
            if emb.ndim != 1 or emb.size == 0:
                raise ValueError("embedding must be a non-empty 1-D vector")
            norm = float(np.linalg.norm(emb))
            if not math.isfinite(norm) or abs(norm - 1.0) > 1e-6:
                raise ValueError(f"embedding must have unit L2 norm, got {norm}")
            object.__setattr__(self, "embedding", emb)


@dataclass(frozen=True)
class FrameDetections:
    """All detections of one frame. frame_index is 0-based in memory."""

    frame_index: int
    timestamp_s: float
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        if not (math.isfinite(self.timestamp_s) and self.timestamp_s >= 0):
            raise ValueError(f"timestamp_s must be finite and >= 0, got {self.timestamp_s}")
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass
class DetectionStream:
    """Time-ordered frames at a fixed rate. Frame i sits at list position i."""

    fps: float
    frames: list[FrameDetections] = field(default_factory=list)

    def __post_init__(self):
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise ValueError(f"fps must be positive, got {self.fps}")
        for pos, frame in enumerate(self.frames):
            if frame.frame_index != pos:
                raise ValueError(
                    f"frames must be contiguous from 0: position {pos} "
                    f"holds frame_index {frame.frame_index}"
                )

    def __iter__(self):
        return iter(self.frames)

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class RoILine:
    """Counting line. Only horizontal lines with downward flow are supported."""

    position_norm: float = 0.75
    axis: str = "horizontal"
    flow_direction: str = "increasing_y"

    def __post_init__(self):
        if self.axis != "horizontal":
            raise ValueError(f"axis must be 'horizontal', got {self.axis!r}")
        if self.flow_direction != "increasing_y":
            raise ValueError(
                f"flow_direction must be 'increasing_y', got {self.flow_direction!r}"
            )
        if not (0.0 < self.position_norm < 1.0):
            raise ValueError(f"position_norm must be in (0, 1), got {self.position_norm}")

    def line_y(self, frame_height: float) -> float:
        if frame_height <= 0:
            raise ValueError(f"frame_height must be positive, got {frame_height}")
        return self.position_norm * frame_height


def crossed_line(prev_center_y: float, curr_center_y: float, line: RoILine, frame_height: float) -> bool:
    """True when a center moved from above the line to on-or-below it.

    The predicate is strict on the previous side (prev < line_y <= curr), so a
    center sitting exactly on the line counts once, on the frame it arrives.
    """
    y = line.line_y(frame_height)
    return prev_center_y < y <= curr_center_y
