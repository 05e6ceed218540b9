"""Readers and writers for the on-disk formats.

Four formats live here: comma-separated detection streams, a binary
embedding sidecar, YOLO TXT annotations, and key=value run configs.
Frame indices are 1-based in files and 0-based in memory; the
conversion happens in this module and nowhere else.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .core import BBox, Detection, DetectionStream, FrameDetections

_EMB_MAGIC = b"GFEMB1"


@dataclass(frozen=True)
class DetectionFileRecord:
    """One line of a detection or track file.

    frame_index is 0-based here; track_id is -1 for raw detections.
    """

    frame_index: int
    track_id: int
    bbox: BBox
    confidence: float
    class_id: int = 0

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        if self.track_id < -1:
            raise ValueError("track_id must be >= -1")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")


def _parse_float(token: str, path, line_no: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ValueError(
            f"{path}:{line_no}: malformed {what} {token!r}"
        ) from None
    if not math.isfinite(value):
        raise ValueError(f"{path}:{line_no}: non-finite {what} {token!r}")
    return value


def _parse_int(token: str, path, line_no: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ValueError(
            f"{path}:{line_no}: malformed {what} {token!r}"
        ) from None


def read_detection_records(path) -> List[DetectionFileRecord]:
    """Parse a detection file into records (frames converted to 0-based).

    Frame numbers must be >= 1 and non-decreasing through the file.
    """
    records: List[DetectionFileRecord] = []
    prev_frame = 0
    with open(path, "r", encoding="ascii", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise ValueError(
                    f"{path}:{line_no}: expected 8 comma-separated fields, "
                    f"got {len(parts)}"
                )
            frame = _parse_int(parts[0], path, line_no, "frame")
            if frame < 1:
                raise ValueError(
                    f"{path}:{line_no}: frame must be >= 1, got {frame}"
                )
            if frame < prev_frame:
                raise ValueError(
                    f"{path}:{line_no}: decreasing frame {frame} "
                    f"after {prev_frame}"
                )
            prev_frame = frame
            track_id = _parse_int(parts[1], path, line_no, "track_id")
            x = _parse_float(parts[2], path, line_no, "x_min")
            y = _parse_float(parts[3], path, line_no, "y_min")
            w = _parse_float(parts[4], path, line_no, "width")
            h = _parse_float(parts[5], path, line_no, "height")
            conf = _parse_float(parts[6], path, line_no, "confidence")
            class_id = _parse_int(parts[7], path, line_no, "class_id")
            try:
                record = DetectionFileRecord(
                    frame_index=frame - 1,
                    track_id=track_id,
                    bbox=BBox(x, y, w, h),
                    confidence=conf,
                    class_id=class_id,
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
            records.append(record)
    return records


def read_detection_stream(path, fps: float) -> DetectionStream:
    """Read a detection file as a frame-contiguous stream.

    Frames absent from the file become empty frames, up to the highest
    frame number present.
    """
    records = read_detection_records(path)
    n_frames = max((r.frame_index for r in records), default=-1) + 1
    per_frame: List[List[Detection]] = [[] for _ in range(n_frames)]
    for r in records:
        per_frame[r.frame_index].append(
            Detection(bbox=r.bbox, confidence=r.confidence, class_id=r.class_id)
        )
    frames = [
        FrameDetections(
            frame_index=i,
            timestamp_s=i / fps,
            detections=tuple(dets),
        )
        for i, dets in enumerate(per_frame)
    ]
    return DetectionStream(fps=fps, frames=frames)


def write_detection_records(
    records: Iterable[DetectionFileRecord], path
) -> None:
    """Write records as `frame,track_id,x,y,w,h,conf,class` lines.

    Frames are written 1-based; floats carry six decimals; LF endings.
    """
    rows = sorted(records, key=lambda r: r.frame_index)
    with open(path, "w", encoding="ascii", newline="") as fh:
        for r in rows:
            fh.write(
                f"{r.frame_index + 1},{r.track_id},"
                f"{r.bbox.x_min:.6f},{r.bbox.y_min:.6f},"
                f"{r.bbox.width:.6f},{r.bbox.height:.6f},"
                f"{r.confidence:.6f},{r.class_id}\n"
            )


def write_detection_stream(stream: DetectionStream, path) -> None:
    """Write a raw stream (every track_id is -1)."""
    records = [
        DetectionFileRecord(
            frame_index=frame.frame_index,
            track_id=-1,
            bbox=det.bbox,
            confidence=det.confidence,
            class_id=det.class_id,
        )
        for frame in stream.frames
        for det in frame.detections
    ]
    write_detection_records(records, path)


def write_embedding_sidecar(
    entries: Sequence[Tuple[int, int, np.ndarray]], path
) -> None:
    """Write (frame_index, ordinal, vector) triples.

    Header: magic, u32 dimension, u32 record count; then per record a
    u32 1-based frame, u32 ordinal, and the vector as little-endian
    f32. Vectors must share one dimension and be unit-norm within 1e-4.
    """
    dims = {int(np.asarray(v).shape[0]) for _, _, v in entries}
    if len(dims) > 1:
        raise ValueError(f"mixed embedding dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(struct.pack("<II", dim, len(entries)))
        for frame_index, ordinal, vec in entries:
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
            if frame_index < 0 or ordinal < 0:
                raise ValueError("frame_index and ordinal must be >= 0")
            fh.write(struct.pack("<II", frame_index + 1, ordinal))
            fh.write(arr.tobytes())


def read_embedding_sidecar(path) -> Dict[Tuple[int, int], np.ndarray]:
    """Read a sidecar into {(0-based frame, ordinal): float32 vector}."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_EMB_MAGIC))
        if magic != _EMB_MAGIC:
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
            vec = np.frombuffer(blob[8:], dtype="<f4").copy()
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}: record {i}: non-finite embedding")
            norm = float(np.linalg.norm(vec.astype(np.float64)))
            if abs(norm - 1.0) > 1e-4:
                raise ValueError(
                    f"{path}: record {i}: embedding norm {norm} departs "
                    "from 1 by more than 1e-4"
                )
            out[(frame - 1, ordinal)] = vec
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after {count} records")
    return out


def attach_embeddings(
    stream: DetectionStream, sidecar: Dict[Tuple[int, int], np.ndarray]
) -> DetectionStream:
    """Return a copy of the stream with sidecar vectors on detections.

    Vectors are renormalized to exact unit length (the sidecar allows
    1e-4 slack; detections demand 1e-6).
    """
    frames = []
    for frame in stream.frames:
        dets = []
        for ordinal, det in enumerate(frame.detections):
            vec = sidecar.get((frame.frame_index, ordinal))
            if vec is None:
                dets.append(det)
            else:
                unit = vec / np.linalg.norm(vec.astype(np.float64))
                dets.append(
                    Detection(
                        bbox=det.bbox,
                        confidence=det.confidence,
                        class_id=det.class_id,
                        embedding=unit.astype(np.float32),
                    )
                )
        frames.append(
            FrameDetections(
                frame_index=frame.frame_index,
                timestamp_s=frame.timestamp_s,
                detections=tuple(dets),
            )
        )
    return DetectionStream(fps=stream.fps, frames=frames)


def write_yolo_annotation(
    objects: Sequence[Tuple[int, BBox]], image_w: float, image_h: float, path
) -> None:
    """Write `class cx cy w h` lines normalized by the image size.

    Every box must lie fully inside the image.
    """
    if image_w <= 0 or image_h <= 0:
        raise ValueError("image dimensions must be positive")
    lines = []
    for class_id, box in objects:
        if class_id < 0:
            raise ValueError("class_id must be >= 0")
        if (
            box.x_min < 0
            or box.y_min < 0
            or box.x_max > image_w
            or box.y_max > image_h
        ):
            raise ValueError(
                f"box {box} exceeds image bounds {image_w}x{image_h}"
            )
        cx, cy = box.center
        lines.append(
            f"{class_id} {cx / image_w:.6f} {cy / image_h:.6f} "
            f"{box.width / image_w:.6f} {box.height / image_h:.6f}\n"
        )
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.writelines(lines)


def read_yolo_annotation(
    path, image_w: float, image_h: float
) -> List[Tuple[int, BBox]]:
    """Parse a YOLO TXT file back into pixel-space boxes."""
    if image_w <= 0 or image_h <= 0:
        raise ValueError("image dimensions must be positive")
    out: List[Tuple[int, BBox]] = []
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
            class_id = _parse_int(parts[0], path, line_no, "class_id")
            cx = _parse_float(parts[1], path, line_no, "cx")
            cy = _parse_float(parts[2], path, line_no, "cy")
            w = _parse_float(parts[3], path, line_no, "w")
            h = _parse_float(parts[4], path, line_no, "h")
            for name, v in (("cx", cx), ("cy", cy), ("w", w), ("h", h)):
                if not 0.0 <= v <= 1.0:
                    raise ValueError(
                        f"{path}:{line_no}: {name}={v} outside [0, 1]"
                    )
            out.append(
                (
                    class_id,
                    BBox(
                        (cx - w / 2.0) * image_w,
                        (cy - h / 2.0) * image_h,
                        w * image_w,
                        h * image_h,
                    ),
                )
            )
    return out


def write_key_value(mapping: Dict[str, object], path) -> None:
    """Write a `key=value` config file, one pair per line."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        for key, value in mapping.items():
            key = str(key)
            if not key or "=" in key or any(c.isspace() for c in key):
                raise ValueError(f"bad config key {key!r}")
            fh.write(f"{key}={value}\n")


def read_key_value(path) -> Dict[str, str]:
    """Parse a `key=value` file; `#` lines and blanks are skipped."""
    out: Dict[str, str] = {}
    with open(path, "r", encoding="ascii", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(
                    f"{path}:{line_no}: expected key=value, got {line!r}"
                )
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key:
                raise ValueError(f"{path}:{line_no}: empty key")
            if key in out:
                raise ValueError(f"{path}:{line_no}: duplicate key {key!r}")
            out[key] = value
    return out


def write_ground_truth_records(gt, path) -> None:
    """Write true trajectories in the detection grammar with real ids."""
    records = []
    for seed_id, traj in sorted(gt.trajectories.items()):
        for frame_index, box in sorted(traj.items()):
            if not gt.visibility[seed_id].get(frame_index, False):
                continue
            records.append(
                DetectionFileRecord(
                    frame_index=frame_index,
                    track_id=seed_id,
                    bbox=box,
                    confidence=1.0,
                    class_id=gt.class_ids[seed_id],
                )
            )
    write_detection_records(records, path)
