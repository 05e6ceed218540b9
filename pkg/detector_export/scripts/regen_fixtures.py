"""Rebuild every file under tests/fixtures from scratch.

The fixtures chain four deterministic steps, so reruns reproduce them
byte for byte:

  1. compose a 10-image annotated dataset with the grainflow CLI
     (seed 0), giving manifest.txt, images/, labels/
  2. flatten the composed images into frames/, a plain directory the
     exporter can treat as a frame sequence (global indices keep the
     names unique across the train/val split)
  3. train the detector on that dataset with a fixed seed, writing
     detector.pt and train_log.txt
  4. export detections over frames/ with the fresh weights; the text
     output becomes golden_detections.txt for byte comparison in tests

Training and export run on one torch thread because thread count
changes float reduction order, which would break the golden bytes.

Run from anywhere: python scripts/regen_fixtures.py
"""
import shutil
import subprocess
import sys
from pathlib import Path

import torch

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

# one batch per epoch at this size; the background BCE needs a few
# hundred steps before off-kernel cells drop below the 0.4 threshold
TRAIN_EPOCHS = 300
TRAIN_BATCH = 8
SEED = 0


def compose_dataset(root: Path) -> Path:
    out = root / "dataset10"
    if out.exists():
        shutil.rmtree(out)
    subprocess.run(
        [
            "grainflow", "gen-dataset",
            "--images", "10",
            "--seed", str(SEED),
            "--out", str(out),
        ],
        check=True,
    )
    return out / "manifest.txt"


def flatten_frames(root: Path, dataset: Path) -> Path:
    frames = root / "frames"
    if frames.exists():
        shutil.rmtree(frames)
    frames.mkdir(parents=True)
    images = sorted((dataset / "images").rglob("*.png"))
    for img in images:
        shutil.copyfile(img, frames / img.name)
    print(f"frames: {len(images)} images -> {frames}")
    return frames


def train_weights(root: Path, manifest: Path) -> Path:
    from detector_export.train import TrainSpec, train

    weights = root / "detector.pt"
    spec = TrainSpec(epochs=TRAIN_EPOCHS, batch_size=TRAIN_BATCH, rng_seed=SEED)
    result = train(manifest, spec, weights, root / "train_log.txt")
    print(f"weights: {weights} recall={result.per_class_recall}")
    return weights


def export_golden(root: Path, frames: Path, weights: Path) -> None:
    from detector_export.infer import export_detections

    golden = root / "golden_detections.txt"
    summary = export_detections(frames, weights, golden, root / "golden.emb")
    # only the detection text is compared byte for byte; the sidecar is
    # re-derived by the tests, so the scratch copy goes away
    (root / "golden.emb").unlink()
    print(f"golden: {summary.n_detections} detections over {summary.n_frames} frames")


def main() -> int:
    torch.set_num_threads(1)
    FIXTURES.mkdir(parents=True, exist_ok=True)
    manifest = compose_dataset(FIXTURES)
    frames = flatten_frames(FIXTURES, manifest.parent)
    weights = train_weights(FIXTURES, manifest)
    export_golden(FIXTURES, frames, weights)
    return 0


if __name__ == "__main__":
    sys.exit(main())
