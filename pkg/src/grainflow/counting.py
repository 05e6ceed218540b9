"""RoI line-crossing counter over live track states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .core import DetectionStream, RoILine, crossed_line
from .tracking import Track, TrackStatus, Tracker, TrackerConfig, unique_id_count


@dataclass(frozen=True)
class CountReport:
    """Final tally for one run.

    accuracy_pct is present exactly when actual_count is, and equals
    100 * total_count / actual_count.
    """

    per_class_counts: Mapping[int, int]
    total_count: int
    unique_ids: int
    actual_count: Optional[int] = None
    accuracy_pct: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(
            self, "per_class_counts", dict(self.per_class_counts)
        )
        if self.total_count != sum(self.per_class_counts.values()):
            raise ValueError("total_count must equal the per-class sum")
        if self.total_count > self.unique_ids:
            raise ValueError("total_count cannot exceed unique_ids")
        if (self.actual_count is None) != (self.accuracy_pct is None):
            raise ValueError(
                "accuracy_pct must be present exactly when actual_count is"
            )
        if self.actual_count is not None:
            if self.actual_count <= 0:
                raise ValueError("actual_count must be positive")
            expected = 100.0 * self.total_count / self.actual_count
            if self.accuracy_pct != expected:
                raise ValueError("accuracy_pct inconsistent with counts")


@dataclass
class RoiCounter:
    """Accumulates per-class crossing counts; each track id counts once."""

    per_class_counts: dict = field(default_factory=dict)

    def observe_frame(
        self, tracks: Sequence[Track], line: RoILine, frame_height: float
    ) -> "RoiCounter":
        """Credit every confirmed, not-yet-counted track whose center
        crossed the line between the previous frame and this one."""
        for track in tracks:
            if track.status is not TrackStatus.CONFIRMED or track.counted:
                continue
            if crossed_line(
                track.last_center_y, track.center_y, line, frame_height
            ):
                track.counted = True
                self.per_class_counts[track.class_id] = (
                    self.per_class_counts.get(track.class_id, 0) + 1
                )
        return self

    @property
    def total(self) -> int:
        return sum(self.per_class_counts.values())

    def finalize(
        self, all_tracks: Sequence[Track], actual_count: Optional[int] = None
    ) -> CountReport:
        if actual_count is not None and actual_count <= 0:
            raise ValueError("actual_count must be positive")
        total = self.total
        accuracy = (
            None if actual_count is None else 100.0 * total / actual_count
        )
        return CountReport(
            per_class_counts=dict(self.per_class_counts),
            total_count=total,
            unique_ids=unique_id_count(all_tracks),
            actual_count=actual_count,
            accuracy_pct=accuracy,
        )


def track_and_count(
    stream: DetectionStream,
    cfg: TrackerConfig,
    line: RoILine,
    frame_height: float,
    actual_count: Optional[int] = None,
) -> CountReport:
    """Run a tracker over the stream and count line crossings.

    The rebirth buffer is rescaled to the stream's frame rate so the
    coast window covers the same wall-clock span at any fps.
    """
    tracker = Tracker(cfg.scaled_for_fps(stream.fps))
    counter = RoiCounter()
    for frame in stream.frames:
        live = tracker.step(frame)
        counter.observe_frame(live, line, frame_height)
    return counter.finalize(tracker.all_tracks, actual_count)
