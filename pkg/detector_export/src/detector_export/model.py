"""Small single-scale detector for seed kernels on plain backgrounds.

Three stride-2 convolutions take a 320x320 image to a 40x40 grid; a
neck convolution refines it, and two 1x1 heads predict per-cell class
scores and box geometry. The neck activations double as the appearance
features exported alongside detections. Every convolution carries the
same filter count so the one documented width knob applies uniformly.
"""
from typing import List, Tuple

import torch
from torch import nn
from torchvision.ops import batched_nms

STRIDE = 8

# log-size is clamped before exp so one wild cell cannot overflow
_LOG_SIZE_LIMIT = 4.0


class SeedDetector(nn.Module):
    def __init__(
        self, n_classes: int = 1, filters: int = 64, dropout_rate: float = 0.1
    ):
        super().__init__()
        if n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {n_classes}")
        if filters < 1:
            raise ValueError(f"filters must be >= 1, got {filters}")
        self.n_classes = n_classes
        self.filters = filters
        act = nn.LeakyReLU(0.1, inplace=True)
        self.backbone = nn.Sequential(
            nn.Conv2d(3, filters, 3, stride=2, padding=1),
            act,
            nn.Conv2d(filters, filters, 3, stride=2, padding=1),
            act,
            nn.Conv2d(filters, filters, 3, stride=2, padding=1),
            act,
        )
        self.neck = nn.Sequential(
            nn.Conv2d(filters, filters, 3, padding=1),
            act,
            nn.Dropout2d(dropout_rate),
        )
        self.cls_head = nn.Conv2d(filters, n_classes, 1)
        self.box_head = nn.Conv2d(filters, 4, 1)

    def forward(
        self, images: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Map (B,3,H,W) to class logits, raw boxes, and neck features.

        H and W must be multiples of the stride. Outputs share the
        (B,*,H/8,W/8) grid: logits (B,C,.,.), boxes (B,4,.,.) as cell
        offsets plus log sizes, features (B,filters,.,.).
        """
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (B,3,H,W) input, got {tuple(images.shape)}")
        if images.shape[2] % STRIDE or images.shape[3] % STRIDE:
            raise ValueError(
                f"input sides must be multiples of {STRIDE}, "
                f"got {tuple(images.shape[2:])}"
            )
        feat = self.neck(self.backbone(images))
        return self.cls_head(feat), self.box_head(feat), feat


def decode_boxes(
    cls_logits: torch.Tensor,
    box_raw: torch.Tensor,
    confidence_threshold: float,
    nms_threshold: float,
) -> List[Tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """Turn head outputs into per-image (boxes, scores, classes).

    Boxes are (x_min, y_min, x_max, y_max) in input pixels. Cells score
    sigmoid(logit) per class; survivors above the confidence threshold
    go through class-aware NMS. Returned rows are sorted by descending
    score with index order breaking ties, so output order is stable.
    """
    batch, _, grid_h, grid_w = cls_logits.shape
    scores_all = torch.sigmoid(cls_logits)
    ys = torch.arange(grid_h, dtype=torch.float32).view(1, grid_h, 1)
    xs = torch.arange(grid_w, dtype=torch.float32).view(1, 1, grid_w)
    out = []
    for b in range(batch):
        scores, classes = scores_all[b].max(dim=0)
        keep = scores >= confidence_threshold
        if not bool(keep.any()):
            empty = torch.zeros(0)
            out.append((empty.view(0, 4), empty, empty.to(torch.int64)))
            continue
        raw = box_raw[b]
        cx = (xs.squeeze(0) + torch.sigmoid(raw[0])) * STRIDE
        cy = (ys.squeeze(0) + torch.sigmoid(raw[1])) * STRIDE
        w = torch.exp(raw[2].clamp(-_LOG_SIZE_LIMIT, _LOG_SIZE_LIMIT)) * STRIDE
        h = torch.exp(raw[3].clamp(-_LOG_SIZE_LIMIT, _LOG_SIZE_LIMIT)) * STRIDE
        boxes = torch.stack(
            (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), dim=-1
        )
        boxes = boxes[keep]
        kept_scores = scores[keep]
        kept_classes = classes[keep]
        order = batched_nms(boxes, kept_scores, kept_classes, nms_threshold)
        out.append((boxes[order], kept_scores[order], kept_classes[order]))
    return out
