"""Training loop for the seed detector.

The published hyperparameter table drives TrainSpec defaults; every
field can be overridden. Two of the documented knobs need translation:
the uniform 64-filter width maps onto every convolution, and "dropout:
yes" becomes a Dropout2d on the neck. A pretrained-weights id is
honored when it names a readable checkpoint, otherwise training starts
from scratch and the log records the id as unapplied.
"""
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from torch import nn

from .formats import ManifestRow, read_dataset_manifest, read_yolo_boxes
from .model import STRIDE, SeedDetector, decode_boxes

_BOX_LOSS_WEIGHT = 5.0
_POS_WEIGHT_CAP = 100.0


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 0.001
    batch_size: int = 32
    input_size: Tuple[int, int, int] = (320, 320, 3)
    confidence_threshold: float = 0.4
    nms_threshold: float = 0.4
    iou_threshold: float = 0.5
    pretrained: str = "yolov8-coco"
    filters_per_layer: int = 64
    dropout: bool = True
    epochs: int = 60
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if len(self.input_size) != 3 or self.input_size[2] != 3:
            raise ValueError(
                f"input_size must be (height, width, 3), got {self.input_size}"
            )
        h, w, _ = self.input_size
        if h < STRIDE or w < STRIDE or h % STRIDE or w % STRIDE:
            raise ValueError(
                f"input sides must be positive multiples of {STRIDE}"
            )
        for name in ("confidence_threshold", "nms_threshold", "iou_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.filters_per_layer < 1:
            raise ValueError("filters_per_layer must be >= 1")


@dataclass(frozen=True)
class TrainResult:
    weights_path: Path
    log_path: Path
    per_class_recall: Dict[int, float] = field(default_factory=dict)


def _load_split(
    rows: Sequence[ManifestRow], spec: TrainSpec
) -> Tuple[torch.Tensor, List[List[Tuple[int, float, float, float, float]]]]:
    """Read images into a (N,3,H,W) float tensor plus per-image boxes."""
    want_h, want_w, _ = spec.input_size
    images = []
    boxes = []
    for row in rows:
        with Image.open(row.image_path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (want_w, want_h):
                raise ValueError(
                    f"{row.image_path}: image is {rgb.size}, "
                    f"spec wants {(want_w, want_h)}"
                )
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
        images.append(torch.from_numpy(arr).permute(2, 0, 1))
        boxes.append(read_yolo_boxes(row.label_path, want_w, want_h))
    return torch.stack(images), boxes


def _build_targets(
    box_lists: Sequence[Sequence[Tuple[int, float, float, float, float]]],
    n_classes: int,
    grid_h: int,
    grid_w: int,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-cell targets: the cell holding a box center is positive.

    Returns (cls map (N,C,H,W), geometry (N,4,H,W), positive mask
    (N,H,W)). If two centers share a cell the later one wins; at the
    densities this detector is meant for that is a rare tie.
    """
    n = len(box_lists)
    cls_t = torch.zeros((n, n_classes, grid_h, grid_w))
    geo_t = torch.zeros((n, 4, grid_h, grid_w))
    pos = torch.zeros((n, grid_h, grid_w), dtype=torch.bool)
    for i, items in enumerate(box_lists):
        for cid, x, y, w, h in items:
            cx = x + w / 2.0
            cy = y + h / 2.0
            col = min(int(cx / STRIDE), grid_w - 1)
            row = min(int(cy / STRIDE), grid_h - 1)
            cls_t[i, :, row, col] = 0.0
            cls_t[i, cid, row, col] = 1.0
            geo_t[i, 0, row, col] = cx / STRIDE - col
            geo_t[i, 1, row, col] = cy / STRIDE - row
            geo_t[i, 2, row, col] = math.log(max(w / STRIDE, 1e-6))
            geo_t[i, 3, row, col] = math.log(max(h / STRIDE, 1e-6))
            pos[i, row, col] = True
    return cls_t, geo_t, pos


def _epoch_loss(
    model: SeedDetector,
    images: torch.Tensor,
    cls_t: torch.Tensor,
    geo_t: torch.Tensor,
    pos: torch.Tensor,
    spec: TrainSpec,
    optimizer: torch.optim.Optimizer,
    generator: torch.Generator,
) -> float:
    order = torch.randperm(images.shape[0], generator=generator)
    total = 0.0
    for start in range(0, images.shape[0], spec.batch_size):
        idx = order[start : start + spec.batch_size]
        cls_logits, box_raw, _ = model(images[idx])
        tgt_cls = cls_t[idx]
        tgt_geo = geo_t[idx]
        tgt_pos = pos[idx]

        n_pos = int(tgt_pos.sum())
        n_cells = tgt_cls.numel()
        pos_weight = torch.tensor(
            min(max((n_cells - n_pos) / max(n_pos, 1), 1.0), _POS_WEIGHT_CAP)
        )
        cls_loss = nn.functional.binary_cross_entropy_with_logits(
            cls_logits, tgt_cls, pos_weight=pos_weight
        )
        if n_pos:
            mask = tgt_pos.unsqueeze(1)
            pred_off = torch.sigmoid(box_raw[:, :2])
            pred_log = box_raw[:, 2:]
            off_loss = nn.functional.smooth_l1_loss(
                pred_off[mask.expand_as(pred_off)],
                tgt_geo[:, :2][mask.expand_as(pred_off)],
            )
            size_loss = nn.functional.smooth_l1_loss(
                pred_log[mask.expand_as(pred_log)],
                tgt_geo[:, 2:][mask.expand_as(pred_log)],
            )
            box_loss = off_loss + size_loss
        else:
            box_loss = torch.zeros(())
        loss = cls_loss + _BOX_LOSS_WEIGHT * box_loss
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        total += float(loss.detach()) * len(idx)
    return total / images.shape[0]


def _iou_xywh(a, b) -> float:
    ax2, ay2 = a[0] + a[2], a[1] + a[3]
    bx2, by2 = b[0] + b[2], b[1] + b[3]
    iw = min(ax2, bx2) - max(a[0], b[0])
    ih = min(ay2, by2) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def _split_recall(
    model: SeedDetector,
    images: torch.Tensor,
    box_lists: Sequence[Sequence[Tuple[int, float, float, float, float]]],
    spec: TrainSpec,
) -> Dict[int, float]:
    """Greedy per-class recall of ground truth at the configured IoU."""
    matched: Dict[int, int] = {}
    total: Dict[int, int] = {}
    model.eval()
    with torch.no_grad():
        for i in range(images.shape[0]):
            cls_logits, box_raw, _ = model(images[i : i + 1])
            boxes, _, classes = decode_boxes(
                cls_logits, box_raw,
                spec.confidence_threshold, spec.nms_threshold,
            )[0]
            preds = [
                (
                    int(classes[j]),
                    (
                        float(boxes[j, 0]),
                        float(boxes[j, 1]),
                        float(boxes[j, 2] - boxes[j, 0]),
                        float(boxes[j, 3] - boxes[j, 1]),
                    ),
                )
                for j in range(boxes.shape[0])
            ]
            taken = [False] * len(preds)
            for cid, x, y, w, h in box_lists[i]:
                total[cid] = total.get(cid, 0) + 1
                best, best_iou = -1, spec.iou_threshold
                for j, (pcid, pbox) in enumerate(preds):
                    if taken[j] or pcid != cid:
                        continue
                    iou = _iou_xywh((x, y, w, h), pbox)
                    if iou >= best_iou:
                        best, best_iou = j, iou
                if best >= 0:
                    taken[best] = True
                    matched[cid] = matched.get(cid, 0) + 1
    model.train()
    return {
        cid: matched.get(cid, 0) / total[cid] for cid in sorted(total)
    }


def train(
    manifest_path,
    spec: TrainSpec,
    weights_path,
    log_path,
) -> TrainResult:
    """Fit the detector on a composed dataset and save weights plus log.

    The manifest must follow the dataset layout: images/<split>/ and
    labels/<split>/ relative to the manifest file. Raises on an empty
    dataset or a manifest entry whose label file is missing.
    """
    rows = read_dataset_manifest(manifest_path)
    if not rows:
        raise ValueError(f"{manifest_path}: dataset is empty")
    missing = [r.label_path for r in rows if not r.label_path.is_file()]
    if missing:
        raise ValueError(
            f"missing label files for {len(missing)} entries, "
            f"first: {missing[0]}"
        )

    train_rows = [r for r in rows if r.split == "train"]
    val_rows = [r for r in rows if r.split == "val"]
    if not train_rows:
        raise ValueError(f"{manifest_path}: no entries in the train split")

    torch.manual_seed(spec.rng_seed)
    generator = torch.Generator().manual_seed(spec.rng_seed)

    train_images, train_boxes = _load_split(train_rows, spec)
    val_images, val_boxes = (
        _load_split(val_rows, spec) if val_rows else (torch.zeros((0,)), [])
    )
    n_classes = 1 + max(
        (cid for boxes in train_boxes + list(val_boxes) for cid, *_ in boxes),
        default=0,
    )

    model = SeedDetector(
        n_classes=n_classes,
        filters=spec.filters_per_layer,
        dropout_rate=0.1 if spec.dropout else 0.0,
    )

    log_lines = ["hyperparameters:"]
    for key, value in asdict(spec).items():
        log_lines.append(f"  {key} = {value}")
    log_lines.append(
        f"  note: filters_per_layer applied to every convolution; "
        f"dropout {'applied to the neck at rate 0.1' if spec.dropout else 'disabled'}"
    )

    pretrained = Path(spec.pretrained)
    if pretrained.is_file():
        payload = torch.load(pretrained, map_location="cpu", weights_only=True)
        state = payload.get("state_dict", payload)
        compatible = {
            k: v
            for k, v in state.items()
            if k in model.state_dict() and model.state_dict()[k].shape == v.shape
        }
        model.load_state_dict(compatible, strict=False)
        log_lines.append(
            f"pretrained: loaded {len(compatible)} tensors from {pretrained}"
        )
    else:
        log_lines.append(
            f"pretrained: id '{spec.pretrained}' does not name a readable "
            "checkpoint here; unapplied, training from scratch"
        )

    grid_h = spec.input_size[0] // STRIDE
    grid_w = spec.input_size[1] // STRIDE
    cls_t, geo_t, pos = _build_targets(train_boxes, n_classes, grid_h, grid_w)

    log_lines.append(
        f"dataset: {len(train_rows)} train / {len(val_rows)} val images, "
        f"{n_classes} classes"
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    model.train()
    for epoch in range(1, spec.epochs + 1):
        mean_loss = _epoch_loss(
            model, train_images, cls_t, geo_t, pos, spec, optimizer, generator
        )
        log_lines.append(f"epoch {epoch}/{spec.epochs} loss {mean_loss:.6f}")

    recall = (
        _split_recall(model, val_images, val_boxes, spec) if val_rows else {}
    )
    if recall:
        for cid, r in recall.items():
            log_lines.append(f"validation recall class {cid}: {r:.4f}")
    else:
        log_lines.append("validation split empty; recall not measured")

    weights_path = Path(weights_path)
    torch.save(
        {
            "state_dict": model.state_dict(),
            "n_classes": n_classes,
            "spec": asdict(spec),
        },
        weights_path,
    )
    log_path = Path(log_path)
    log_path.write_text("\n".join(log_lines) + "\n", encoding="ascii")
    return TrainResult(
        weights_path=weights_path, log_path=log_path, per_class_recall=recall
    )
