"""Shape contracts of the detector head and the decoder."""
import pytest
import torch

from detector_export.model import STRIDE, SeedDetector, decode_boxes


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return SeedDetector(n_classes=2, filters=8, dropout_rate=0.0).eval()


class TestForward:
    def test_output_grids(self, model):
        cls_logits, box_raw, feat = model(torch.zeros(2, 3, 64, 48))
        assert cls_logits.shape == (2, 2, 8, 6)
        assert box_raw.shape == (2, 4, 8, 6)
        assert feat.shape == (2, 8, 8, 6)

    def test_rejects_wrong_rank(self, model):
        with pytest.raises(ValueError, match=r"\(B,3,H,W\)"):
            model(torch.zeros(3, 64, 64))

    def test_rejects_non_stride_sides(self, model):
        with pytest.raises(ValueError, match=f"multiples of {STRIDE}"):
            model(torch.zeros(1, 3, 60, 64))

    def test_rejects_bad_construction(self):
        with pytest.raises(ValueError, match="n_classes"):
            SeedDetector(n_classes=0)
        with pytest.raises(ValueError, match="filters"):
            SeedDetector(filters=0)


class TestDecodeBoxes:
    def _heads(self, grid=4):
        cls_logits = torch.full((1, 1, grid, grid), -10.0)
        box_raw = torch.zeros((1, 4, grid, grid))
        return cls_logits, box_raw

    def test_empty_when_nothing_clears_threshold(self):
        cls_logits, box_raw = self._heads()
        (boxes, scores, classes), = decode_boxes(cls_logits, box_raw, 0.4, 0.4)
        assert boxes.shape == (0, 4)
        assert scores.shape == (0,)
        assert classes.dtype == torch.int64

    def test_single_cell_box_geometry(self):
        cls_logits, box_raw = self._heads()
        cls_logits[0, 0, 1, 2] = 10.0
        (boxes, scores, classes), = decode_boxes(cls_logits, box_raw, 0.4, 0.4)
        assert boxes.shape == (1, 4)
        # zero raw outputs put the center at (col + 0.5, row + 0.5) cells
        # with one-cell sides
        cx, cy = (2 + 0.5) * STRIDE, (1 + 0.5) * STRIDE
        assert boxes[0].tolist() == pytest.approx(
            [cx - STRIDE / 2, cy - STRIDE / 2, cx + STRIDE / 2, cy + STRIDE / 2]
        )
        assert float(scores[0]) > 0.99
        assert int(classes[0]) == 0

    def test_nms_collapses_overlapping_cells(self):
        cls_logits, box_raw = self._heads()
        cls_logits[0, 0, 1, 1] = 10.0
        cls_logits[0, 0, 1, 2] = 9.0
        box_raw[0, 2:] = 2.0  # large boxes so neighbours overlap heavily
        (boxes, _, _), = decode_boxes(cls_logits, box_raw, 0.4, 0.4)
        assert boxes.shape[0] == 1
        (boxes_loose, _, _), = decode_boxes(cls_logits, box_raw, 0.4, 0.99)
        assert boxes_loose.shape[0] == 2

    def test_results_sorted_by_descending_score(self):
        cls_logits, box_raw = self._heads()
        cls_logits[0, 0, 0, 0] = 1.0
        cls_logits[0, 0, 3, 3] = 3.0
        (_, scores, _), = decode_boxes(cls_logits, box_raw, 0.4, 0.4)
        assert scores[0] >= scores[1]

    def test_size_clamp_bounds_runaway_cells(self):
        cls_logits, box_raw = self._heads()
        cls_logits[0, 0, 0, 0] = 10.0
        box_raw[0, 2:] = 100.0
        (boxes, _, _), = decode_boxes(cls_logits, box_raw, 0.4, 0.4)
        w = float(boxes[0, 2] - boxes[0, 0])
        assert w == pytest.approx(torch.exp(torch.tensor(4.0)).item() * STRIDE)
