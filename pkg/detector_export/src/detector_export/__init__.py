"""Detector training and detection/embedding export for seed counting."""
from .formats import (
    DetectionRow,
    read_dataset_manifest,
    read_detection_rows,
    read_embeddings,
    read_yolo_boxes,
    write_detection_rows,
    write_embeddings,
)
from .infer import ExportSummary, export_detections, load_detector
from .model import SeedDetector, decode_boxes
from .train import TrainResult, TrainSpec, train

__all__ = [
    "DetectionRow",
    "ExportSummary",
    "SeedDetector",
    "TrainResult",
    "TrainSpec",
    "decode_boxes",
    "export_detections",
    "load_detector",
    "read_dataset_manifest",
    "read_detection_rows",
    "read_embeddings",
    "read_yolo_boxes",
    "train",
    "write_detection_rows",
    "write_embeddings",
]

__version__ = "0.1.0"
