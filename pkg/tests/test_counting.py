import warnings

import pytest

from grainflow.core import BBox, RoILine
from grainflow.counting import CountReport, RoiCounter, track_and_count
from grainflow.kalman import NoiseConfig, initiate
from grainflow.simulator import SimScenario, replay, simulate
from grainflow.tracking import Track, TrackStatus, TrackerConfig

FRAME_H = 1000.0
LINE = RoILine(position_norm=0.75)


def make_track(tid, cy_prev, cy_curr, status=TrackStatus.CONFIRMED, class_id=0):
    h = 20.0
    state = initiate(BBox(50.0, cy_curr - h / 2.0, 20.0, h), NoiseConfig())
    track = Track(id=tid, state=state, status=status, class_id=class_id)
    track.last_center_y = cy_prev
    return track


class TestObserveFrame:
    def test_crossing_counts_once_then_never_again(self):
        counter = RoiCounter()
        track = make_track(1, 740.0, 760.0)
        counter.observe_frame([track], LINE, FRAME_H)
        assert counter.total == 1
        assert track.counted
        y = 760.0
        for _ in range(50):
            track.last_center_y = y
            y += 5.0
            track.state = initiate(BBox(50.0, y - 10.0, 20.0, 20.0), NoiseConfig())
            counter.observe_frame([track], LINE, FRAME_H)
        assert counter.total == 1

    def test_no_tracks_leaves_counts_unchanged(self):
        counter = RoiCounter()
        assert counter.observe_frame([], LINE, FRAME_H) is counter
        assert counter.total == 0
        assert counter.per_class_counts == {}

    def test_two_crossings_same_frame_both_count(self):
        counter = RoiCounter()
        tracks = [make_track(1, 700.0, 800.0), make_track(2, 749.0, 751.0)]
        counter.observe_frame(tracks, LINE, FRAME_H)
        assert counter.total == 2

    def test_only_confirmed_tracks_count(self):
        counter = RoiCounter()
        tracks = [
            make_track(1, 700.0, 800.0, status=TrackStatus.TENTATIVE),
            make_track(2, 700.0, 800.0, status=TrackStatus.LOST),
        ]
        counter.observe_frame(tracks, LINE, FRAME_H)
        assert counter.total == 0

    def test_track_above_line_does_not_count(self):
        counter = RoiCounter()
        counter.observe_frame([make_track(1, 100.0, 200.0)], LINE, FRAME_H)
        assert counter.total == 0

    def test_per_class_tallies(self):
        counter = RoiCounter()
        tracks = [
            make_track(1, 700.0, 800.0, class_id=0),
            make_track(2, 700.0, 800.0, class_id=1),
            make_track(3, 700.0, 800.0, class_id=1),
        ]
        counter.observe_frame(tracks, LINE, FRAME_H)
        assert counter.per_class_counts == {0: 1, 1: 2}
        assert counter.total == 3


class TestFinalize:
    def _tracks(self, n):
        return [make_track(i + 1, 0.0, 10.0) for i in range(n)]

    def test_accuracy_238_of_250(self):
        counter = RoiCounter(per_class_counts={0: 238})
        report = counter.finalize(self._tracks(250), actual_count=250)
        assert report.total_count == 238
        assert report.accuracy_pct == 100.0 * 238 / 250
        assert report.accuracy_pct == pytest.approx(95.2, abs=1e-9)

    def test_accuracy_242_of_250(self):
        counter = RoiCounter(per_class_counts={0: 242})
        report = counter.finalize(self._tracks(250), actual_count=250)
        assert report.accuracy_pct == pytest.approx(96.8, abs=1e-9)

    def test_zero_total_gives_zero_accuracy(self):
        report = RoiCounter().finalize(self._tracks(3), actual_count=250)
        assert report.total_count == 0
        assert report.accuracy_pct == 0.0

    def test_no_actual_gives_no_accuracy(self):
        report = RoiCounter(per_class_counts={0: 2}).finalize(self._tracks(4))
        assert report.actual_count is None
        assert report.accuracy_pct is None

    def test_nonpositive_actual_rejected(self):
        with pytest.raises(ValueError):
            RoiCounter().finalize(self._tracks(1), actual_count=0)
        with pytest.raises(ValueError):
            RoiCounter().finalize(self._tracks(1), actual_count=-5)

    def test_unique_ids_cover_full_history(self):
        report = RoiCounter(per_class_counts={0: 1}).finalize(self._tracks(7), actual_count=10)
        assert report.unique_ids == 7


class TestCountReportValidation:
    def test_total_must_match_class_sum(self):
        with pytest.raises(ValueError):
            CountReport(per_class_counts={0: 2}, total_count=3, unique_ids=5)

    def test_total_cannot_exceed_unique_ids(self):
        with pytest.raises(ValueError):
            CountReport(per_class_counts={0: 6}, total_count=6, unique_ids=5)

    def test_accuracy_requires_actual(self):
        with pytest.raises(ValueError):
            CountReport(
                per_class_counts={0: 1}, total_count=1, unique_ids=1,
                accuracy_pct=50.0,
            )
        with pytest.raises(ValueError):
            CountReport(
                per_class_counts={0: 1}, total_count=1, unique_ids=1,
                actual_count=2,
            )

    def test_accuracy_must_be_consistent(self):
        with pytest.raises(ValueError):
            CountReport(
                per_class_counts={0: 1}, total_count=1, unique_ids=1,
                actual_count=2, accuracy_pct=49.0,
            )


@pytest.fixture(scope="module")
def perfect_world():
    scenario = SimScenario(rng_seed=9, n_seeds=10, fps=60.0)
    gt, _ = simulate(scenario)
    return gt, replay(gt)


class TestPipeline:

    def test_line_position_robustness(self, perfect_world):
        # every seed fully traverses the frame, so the count cannot depend
        # on where the line sits inside the open interval
        gt, stream = perfect_world
        cfg = TrackerConfig()
        counts = []
        for pos in (0.3, 0.5, 0.75, 0.89):
            line = RoILine(position_norm=pos)
            report = track_and_count(stream, cfg, line, gt.frame_h, gt.true_count)
            counts.append(report.total_count)
        assert len(set(counts)) == 1
        assert counts[0] == gt.true_count

    def test_perfect_input_exact(self, perfect_world):
        gt, stream = perfect_world
        for algorithm in ("bytetrack", "strongsort"):
            cfg = TrackerConfig(algorithm=algorithm)
            with warnings.catch_warnings():
                # replay streams carry no embeddings; strongsort degrades
                warnings.simplefilter("ignore", RuntimeWarning)
                report = track_and_count(stream, cfg, LINE, gt.frame_h, gt.true_count)
            assert report.total_count == gt.true_count
            assert report.unique_ids == gt.true_count
            assert report.accuracy_pct == 100.0

    def test_total_never_exceeds_unique_ids_on_noisy_input(self):
        scenario = SimScenario(rng_seed=21, n_seeds=12, fps=60.0)
        gt, stream = simulate(scenario)
        report = track_and_count(stream, TrackerConfig(), LINE, gt.frame_h)
        assert report.total_count <= report.unique_ids
