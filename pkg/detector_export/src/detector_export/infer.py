"""Inference and file export.

Sources are either a directory of images (each file is one frame, in
sorted name order) or a video. Frames run through the detector one at
a time; every kept detection becomes one text line, and its appearance
vector, the neck activations mean-pooled over the box and L2
normalized, becomes one sidecar record keyed by (frame, ordinal).
The network is fully convolutional, so frames need not match the
training resolution; sides are padded up to the stride multiple.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
import torch
from PIL import Image

from .formats import DetectionRow, write_detection_rows, write_embeddings
from .model import STRIDE, SeedDetector, decode_boxes

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class ExportSummary:
    n_frames: int
    n_detections: int
    detections_path: Path
    embeddings_path: Path


def load_detector(weights_path) -> Tuple[SeedDetector, dict]:
    """Restore a trained detector in eval mode plus its stored spec."""
    path = Path(weights_path)
    if not path.is_file():
        raise ValueError(f"{path}: weights file not found")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" not in payload or "spec" not in payload:
        raise ValueError(f"{path}: not a detector checkpoint")
    spec = payload["spec"]
    model = SeedDetector(
        n_classes=int(payload["n_classes"]),
        filters=int(spec["filters_per_layer"]),
        dropout_rate=0.0,
    )
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, spec


def _iter_image_dir(path: Path) -> Iterator[np.ndarray]:
    files = sorted(
        p for p in path.iterdir()
        if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not files:
        raise ValueError(f"{path}: no image files found")
    for file in files:
        with Image.open(file) as img:
            yield np.asarray(img.convert("RGB"))


def _iter_video(path: Path, fps: Optional[float]) -> Iterator[np.ndarray]:
    try:
        import cv2
    except ImportError as exc:
        raise ValueError(
            "video sources require opencv; install the [video] extra"
        ) from exc
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ValueError(f"{path}: could not open video")
    native = cap.get(cv2.CAP_PROP_FPS) or 0.0
    stride = 1
    if fps and native > 0 and fps < native:
        stride = max(1, round(native / fps))
    try:
        index = 0
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            if index % stride == 0:
                yield frame[:, :, ::-1]
            index += 1
    finally:
        cap.release()


def _frames(source, fps: Optional[float]) -> Iterator[np.ndarray]:
    path = Path(source)
    if path.is_dir():
        return _iter_image_dir(path)
    if path.is_file():
        return _iter_video(path, fps)
    raise ValueError(f"{source}: not a readable file or directory")


def _pad_to_stride(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape[:2]
    pad_h = (-h) % STRIDE
    pad_w = (-w) % STRIDE
    if pad_h == 0 and pad_w == 0:
        return arr
    return np.pad(arr, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")


def _pool_feature(
    feat: torch.Tensor, box: Tuple[float, float, float, float]
) -> np.ndarray:
    """Mean neck activation over the cells a box covers, unit-norm."""
    _, channels, grid_h, grid_w = feat.shape
    x_min, y_min, x_max, y_max = box
    c0 = min(max(int(x_min / STRIDE), 0), grid_w - 1)
    r0 = min(max(int(y_min / STRIDE), 0), grid_h - 1)
    c1 = min(max(int(np.ceil(x_max / STRIDE)), c0 + 1), grid_w)
    r1 = min(max(int(np.ceil(y_max / STRIDE)), r0 + 1), grid_h)
    pooled = feat[0, :, r0:r1, c0:c1].mean(dim=(1, 2)).numpy().astype(np.float64)
    norm = float(np.linalg.norm(pooled))
    if norm < 1e-12:
        # dead activations; fall back to a fixed unit vector
        pooled = np.zeros(channels, dtype=np.float64)
        pooled[0] = 1.0
        return pooled.astype(np.float32)
    return (pooled / norm).astype(np.float32)


def export_detections(
    source,
    weights_path,
    detections_path,
    embeddings_path,
    fps: Optional[float] = None,
) -> ExportSummary:
    """Run the detector over a source and write both exchange files.

    Detection lines carry 1-based frame indices and track id -1; only
    detections at or above the stored confidence threshold appear. The
    sidecar holds one unit-norm vector per written line.
    """
    if fps is not None and fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    model, spec = load_detector(weights_path)
    conf_threshold = float(spec["confidence_threshold"])
    nms_threshold = float(spec["nms_threshold"])

    rows: List[DetectionRow] = []
    embeddings: List[Tuple[int, int, np.ndarray]] = []
    n_frames = 0
    with torch.no_grad():
        for frame_index, rgb in enumerate(_frames(source, fps), start=1):
            n_frames += 1
            height, width = rgb.shape[:2]
            padded = _pad_to_stride(rgb)
            tensor = (
                torch.from_numpy(padded.astype(np.float32) / 255.0)
                .permute(2, 0, 1)
                .unsqueeze(0)
            )
            cls_logits, box_raw, feat = model(tensor)
            boxes, scores, classes = decode_boxes(
                cls_logits, box_raw, conf_threshold, nms_threshold
            )[0]
            ordinal = 0
            for j in range(boxes.shape[0]):
                x_min = max(float(boxes[j, 0]), 0.0)
                y_min = max(float(boxes[j, 1]), 0.0)
                x_max = min(float(boxes[j, 2]), float(width))
                y_max = min(float(boxes[j, 3]), float(height))
                if x_max - x_min <= 0 or y_max - y_min <= 0:
                    continue
                rows.append(
                    DetectionRow(
                        frame=frame_index,
                        track_id=-1,
                        x_min=x_min,
                        y_min=y_min,
                        width=x_max - x_min,
                        height=y_max - y_min,
                        confidence=min(float(scores[j]), 1.0),
                        class_id=int(classes[j]),
                    )
                )
                embeddings.append(
                    (
                        frame_index,
                        ordinal,
                        _pool_feature(feat, (x_min, y_min, x_max, y_max)),
                    )
                )
                ordinal += 1
    write_detection_rows(rows, detections_path)
    write_embeddings(embeddings, embeddings_path)
    return ExportSummary(
        n_frames=n_frames,
        n_detections=len(rows),
        detections_path=Path(detections_path),
        embeddings_path=Path(embeddings_path),
    )
