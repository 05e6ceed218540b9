"""Writers and readers for the exchange files this adapter produces.

Two formats leave this package: a comma-separated detection text file
(one line per detection, 1-based frame indices, six-decimal floats, LF
endings) and a binary embedding sidecar keyed by (frame, ordinal). The
grammars are fixed; the counting toolkit reads both without knowing
anything about the detector. Training-side readers for YOLO TXT labels
and the dataset manifest live here too.
"""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

EMB_MAGIC = b"GFEMB1"


@dataclass(frozen=True)
class DetectionRow:
    """One detection line: 1-based frame, -1 track id for raw output."""

    frame: int
    track_id: int
    x_min: float
    y_min: float
    width: float
    height: float
    confidence: float
    class_id: int

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError(f"frame must be >= 1, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("box width and height must be positive")
        for name in ("x_min", "y_min", "width", "height", "confidence"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} is not finite: {v}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")


def write_detection_rows(rows: Sequence[DetectionRow], path) -> None:
    """Write `frame,track_id,x,y,w,h,conf,class` lines, frame-sorted."""
    last = 0
    with open(path, "w", encoding="ascii", newline="") as fh:
        for row in rows:
            if row.frame < last:
                raise ValueError(
                    f"frame indices must be non-decreasing; "
                    f"{row.frame} after {last}"
                )
            last = row.frame
            fh.write(
                f"{row.frame},{row.track_id},"
                f"{row.x_min:.6f},{row.y_min:.6f},"
                f"{row.width:.6f},{row.height:.6f},"
                f"{row.confidence:.6f},{row.class_id}\n"
            )


def read_detection_rows(path) -> List[DetectionRow]:
    rows: List[DetectionRow] = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise ValueError(
                    f"{path}:{line_no}: expected 8 fields, got {len(parts)}"
                )
            try:
                rows.append(
                    DetectionRow(
                        frame=int(parts[0]),
                        track_id=int(parts[1]),
                        x_min=float(parts[2]),
                        y_min=float(parts[3]),
                        width=float(parts[4]),
                        height=float(parts[5]),
                        confidence=float(parts[6]),
                        class_id=int(parts[7]),
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from exc
            if len(rows) >= 2 and rows[-1].frame < rows[-2].frame:
                raise ValueError(
                    f"{path}:{line_no}: frame index decreased"
                )
    return rows


def write_embeddings(
    entries: Sequence[Tuple[int, int, np.ndarray]], path
) -> None:
    """Write (1-based frame, ordinal, vector) records.

    Layout: magic, u32 dimension, u32 record count, then per record a
    u32 frame, u32 ordinal, and the vector as little-endian float32.
    Vectors must share one dimension and be unit-norm within 1e-4.
    """
    dims = {int(np.asarray(v).shape[0]) for _, _, v in entries}
    if len(dims) > 1:
        raise ValueError(f"mixed embedding dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", dim, len(entries)))
        for frame, ordinal, vec in entries:
            if frame < 1 or ordinal < 0:
                raise ValueError("frame must be >= 1 and ordinal >= 0")
            arr = np.asarray(vec, dtype="<f4")
            if arr.ndim != 1:
                raise ValueError("embedding must be a 1-D vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError("embedding contains non-finite values")
            norm = float(np.linalg.norm(arr.astype(np.float64)))
            if abs(norm - 1.0) > 1e-4:
                raise ValueError(
                    f"embedding norm {norm} departs from 1 by more than 1e-4"
                )
            fh.write(struct.pack("<II", frame, ordinal))
            fh.write(arr.tobytes())


def read_embeddings(path) -> Dict[Tuple[int, int], np.ndarray]:
    """Read a sidecar into {(1-based frame, ordinal): float32 vector}."""
    with open(path, "rb") as fh:
        magic = fh.read(len(EMB_MAGIC))
        if magic != EMB_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated header")
        dim, count = struct.unpack("<II", header)
        out: Dict[Tuple[int, int], np.ndarray] = {}
        record_size = 8 + 4 * dim
        for i in range(count):
            blob = fh.read(record_size)
            if len(blob) != record_size:
                raise ValueError(f"{path}: truncated record {i}")
            frame, ordinal = struct.unpack("<II", blob[:8])
            if frame < 1:
                raise ValueError(f"{path}: record {i}: frame must be >= 1")
            out[(frame, ordinal)] = np.frombuffer(blob[8:], dtype="<f4").copy()
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after {count} records")
    return out


def read_yolo_boxes(
    path, image_w: int, image_h: int
) -> List[Tuple[int, float, float, float, float]]:
    """Parse `class cx cy w h` normalized lines into pixel boxes.

    Returns (class_id, x_min, y_min, width, height) tuples.
    """
    boxes = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(
                    f"{path}:{line_no}: expected 5 fields, got {len(parts)}"
                )
            cid = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
            for v in (cx, cy, w, h):
                if not 0.0 <= v <= 1.0:
                    raise ValueError(
                        f"{path}:{line_no}: normalized value {v} outside [0, 1]"
                    )
            boxes.append(
                (
                    cid,
                    (cx - w / 2.0) * image_w,
                    (cy - h / 2.0) * image_h,
                    w * image_w,
                    h * image_h,
                )
            )
    return boxes


@dataclass(frozen=True)
class ManifestRow:
    image_path: Path
    label_path: Path
    split: str
    kernel_count: int


def read_dataset_manifest(path) -> List[ManifestRow]:
    """Parse a dataset manifest: `image split count class:n,...` lines.

    Paths in the file are relative to the manifest's directory.
    """
    root = Path(path).parent
    rows: List[ManifestRow] = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 4:
                raise ValueError(
                    f"{path}:{line_no}: expected 4 fields, got {len(parts)}"
                )
            image_rel, split, count_s, _ = parts
            if split not in ("train", "val"):
                raise ValueError(f"{path}:{line_no}: bad split {split!r}")
            label_rel = image_rel.replace("images/", "labels/", 1)
            label_rel = label_rel.rsplit(".", 1)[0] + ".txt"
            rows.append(
                ManifestRow(
                    image_path=root / image_rel,
                    label_path=root / label_rel,
                    split=split,
                    kernel_count=int(count_s),
                )
            )
    return rows
