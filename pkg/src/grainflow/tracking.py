"""Track lifecycle and the two association strategies.

Two steppers share one lifecycle: a confidence-split two-stage IoU
associator (bytetrack) and an appearance-plus-motion associator over a
confidence-adaptive Kalman filter (strongsort).
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .assignment import FORBIDDEN, gate, solve
from .core import Detection, FrameDetections, iou_matrix
from .kalman import (
    CHI2_GATE_95_4DOF,
    KalmanState,
    NoiseConfig,
    gating_distance_matrix,
    initiate,
    predict_batch_with_arrays,
    update_batch,
)

# appearance + motion blend can reach 1.0 for an orthogonal embedding with
# zero overlap; anything beyond that is worse than "no evidence" and is
# treated as infeasible
_COST_CEILING = 1.0


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"
    REMOVED = "removed"


@dataclass(frozen=True)
class TrackerConfig:
    """Knobs shared by both steppers.

    rebirth_buffer_frames holds wall-clock time constant across frame
    rates when scaled with scaled_for_fps (30 frames at 30 fps).
    """

    algorithm: str = "bytetrack"
    tau_high: float = 0.6
    tau_low: float = 0.1
    iou_match_threshold: float = 0.5
    rebirth_buffer_frames: int = 30
    ema_alpha: float = 0.9
    appearance_weight: float = 0.98
    mahalanobis_gate: float = CHI2_GATE_95_4DOF
    min_hits_to_confirm: int = 2
    detection_confidence_floor: float = 0.4

    def __post_init__(self):
        if self.algorithm not in ("bytetrack", "strongsort"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        # tau_low == tau_high is allowed: it empties the low-score band,
        # which is the ablation that disables second-stage recovery
        if not (0.0 <= self.tau_low <= self.tau_high <= 1.0):
            raise ValueError("need 0 <= tau_low <= tau_high <= 1")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must lie in [0, 1]")
        if not 0.0 <= self.appearance_weight <= 1.0:
            raise ValueError("appearance_weight must lie in [0, 1]")
        if not 0.0 < self.iou_match_threshold <= 1.0:
            raise ValueError("iou_match_threshold must lie in (0, 1]")
        if self.rebirth_buffer_frames < 0:
            raise ValueError("rebirth_buffer_frames must be >= 0")
        if self.min_hits_to_confirm < 1:
            raise ValueError("min_hits_to_confirm must be >= 1")
        if not 0.0 <= self.detection_confidence_floor <= 1.0:
            raise ValueError("detection_confidence_floor must lie in [0, 1]")
        if self.mahalanobis_gate <= 0.0:
            raise ValueError("mahalanobis_gate must be positive")

    def scaled_for_fps(self, fps: float) -> "TrackerConfig":
        """Return a copy whose rebirth buffer covers the same wall-clock
        span at the given frame rate (reference rate 30 fps)."""
        if fps <= 0:
            raise ValueError("fps must be positive")
        scaled = max(1, round(self.rebirth_buffer_frames * fps / 30.0))
        return replace(self, rebirth_buffer_frames=scaled)


@dataclass
class Track:
    """One tracked identity.

    Mutated in place by the steppers; ids are allocated strictly
    increasing and never reused within a run.
    """

    id: int
    state: KalmanState
    status: TrackStatus
    class_id: int
    embedding: Optional[np.ndarray] = None
    frames_since_update: int = 0
    hits: int = 1
    last_center_y: float = 0.0
    counted: bool = False
    last_frame_index: int = -1

    def __post_init__(self):
        if self.id <= 0:
            raise ValueError("track id must be a positive integer")
        if self.frames_since_update < 0:
            raise ValueError("frames_since_update must be >= 0")
        if self.hits < 1:
            raise ValueError("hits must be >= 1")
        if self.embedding is not None:
            self.embedding = _checked_embedding(self.embedding)

    @property
    def center_y(self) -> float:
        return float(self.state.mean[1])

    def predicted_xywh(self) -> tuple:
        cx, cy, a, h = self.state.mean[:4]
        return (cx - a * h / 2.0, cy - h / 2.0, a * h, h)


def _checked_embedding(vec) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError("embedding must be a 1-D vector")
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError("embedding must be unit-norm within 1e-6")
    out = arr.copy()
    out.setflags(write=False)
    return out


def unique_id_count(tracks: Sequence[Track]) -> int:
    """Number of distinct track ids ever created."""
    return len({t.id for t in tracks})


def _next_id(tracks: Sequence[Track]) -> int:
    return max((t.id for t in tracks), default=0) + 1


def _check_frame_order(tracks: Sequence[Track], frame: FrameDetections) -> None:
    last = max((t.last_frame_index for t in tracks), default=-1)
    if last >= 0 and frame.frame_index <= last:
        if frame.frame_index == last:
            raise ValueError(f"duplicate frame_index {frame.frame_index}")
        raise ValueError(
            f"out-of-order frame_index {frame.frame_index} after {last}"
        )


def _birth(next_id: int, det: Detection, cfg: TrackerConfig, kf_cfg: NoiseConfig) -> Track:
    state = initiate(det.bbox, kf_cfg)
    status = (
        TrackStatus.CONFIRMED
        if 1 >= cfg.min_hits_to_confirm
        else TrackStatus.TENTATIVE
    )
    return Track(
        id=next_id,
        state=state,
        status=status,
        class_id=det.class_id,
        embedding=det.embedding,
        frames_since_update=0,
        hits=1,
        last_center_y=float(state.mean[1]),
        counted=False,
    )


def _apply_matches(
    pairs, rows, det_idx, frame_arrays, cfg: TrackerConfig, kf_cfg: NoiseConfig
) -> None:
    """Matched-pair updates for one frame, batched through the filter.

    rows and det_idx locate each pair inside frame_arrays, the per-frame
    (means, covs, measurement rows, confidences) stacks; gathering rows
    from those is cheaper than restacking per-track state.
    """
    if not pairs:
        return
    means, covs, zs_all, confs_all = frame_arrays
    states = [track.state for track, _ in pairs]
    new_states = update_batch(
        states,
        zs_all[det_idx],
        confs_all[det_idx],
        kf_cfg,
        state_arrays=(means[rows], covs[rows]),
    )
    for (track, _), state in zip(pairs, new_states):
        track.state = state
        track.frames_since_update = 0
        track.hits += 1
        if track.hits >= cfg.min_hits_to_confirm:
            track.status = TrackStatus.CONFIRMED


def _apply_miss(track: Track, cfg: TrackerConfig) -> None:
    track.frames_since_update += 1
    if track.status is TrackStatus.TENTATIVE:
        track.status = TrackStatus.REMOVED
    elif track.status is TrackStatus.CONFIRMED:
        track.status = TrackStatus.LOST
    elif (
        track.status is TrackStatus.LOST
        and track.frames_since_update > cfg.rebirth_buffer_frames
    ):
        track.status = TrackStatus.REMOVED


def _predicted_boxes(means: np.ndarray) -> np.ndarray:
    """Track.predicted_xywh for every row of a stacked state-mean array."""
    cx, cy, a, h = means[:, 0], means[:, 1], means[:, 2], means[:, 3]
    w = a * h
    return np.stack([cx - w / 2.0, cy - h / 2.0, w, h], axis=1)


def _det_boxes(dets: Sequence[Detection]) -> np.ndarray:
    """Stacked (x_min, y_min, w, h) rows for a detection list."""
    if not dets:
        return np.zeros((0, 4))
    return np.asarray(
        [(d.bbox.x_min, d.bbox.y_min, d.bbox.width, d.bbox.height) for d in dets],
        dtype=np.float64,
    )


def _cxcyah_rows(boxes: np.ndarray) -> np.ndarray:
    """BBox.to_cxcyah for every (x_min, y_min, w, h) row."""
    x, y, w, h = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    return np.stack([x + w / 2.0, y + h / 2.0, w / h, h], axis=1)


def _iou_cost(track_boxes: np.ndarray, det_boxes: np.ndarray) -> np.ndarray:
    return 1.0 - iou_matrix(track_boxes, det_boxes)


def _associate_by_iou(track_boxes: np.ndarray, det_boxes: np.ndarray, cfg):
    """Match by gated 1 - IoU over (x_min, y_min, w, h) rows.

    Returns (matches, leftover track rows, leftover det rows), all as
    indices into the two input arrays.
    """
    if track_boxes.shape[0] == 0 or det_boxes.shape[0] == 0:
        return (
            [],
            list(range(track_boxes.shape[0])),
            list(range(det_boxes.shape[0])),
        )
    costs = gate(_iou_cost(track_boxes, det_boxes), 1.0 - cfg.iou_match_threshold)
    result = solve(costs)
    return list(result.matches), list(result.unmatched_rows), list(result.unmatched_cols)


def _begin_step(tracks: Sequence[Track], frame: FrameDetections, kf_cfg: NoiseConfig):
    """Shared prologue: order check, carry-over of the previous center,
    then a predict for every live track.

    Returns (live, means, covs); row i of the arrays backs live[i].state,
    so steppers can slice them instead of restacking per track.
    """
    _check_frame_order(tracks, frame)
    live = [t for t in tracks if t.status is not TrackStatus.REMOVED]
    predicted, means, covs = predict_batch_with_arrays(
        [t.state for t in live], kf_cfg
    )
    for t, state in zip(live, predicted):
        t.last_center_y = float(t.state.mean[1])
        t.state = state
        t.last_frame_index = frame.frame_index
    return live, means, covs


def bytetrack_step(
    tracks: Sequence[Track], frame: FrameDetections, cfg: TrackerConfig
) -> tuple:
    """Advance one frame with the confidence-split two-stage associator.

    The full track history (removed tracks included) goes in and comes
    back out; removed tracks never re-enter association.
    """
    kf_cfg = NoiseConfig(nsa_enabled=False)
    live, means, covs = _begin_step(tracks, frame, kf_cfg)
    boxes = _predicted_boxes(means)

    dets = frame.detections
    det_rows = _det_boxes(dets)
    high_idx = [i for i, d in enumerate(dets) if d.confidence >= cfg.tau_high]
    low_idx = [
        i
        for i, d in enumerate(dets)
        if cfg.tau_low <= d.confidence < cfg.tau_high
    ]

    est_rows = [
        i
        for i, t in enumerate(live)
        if t.status in (TrackStatus.CONFIRMED, TrackStatus.LOST)
    ]
    ten_rows = [i for i, t in enumerate(live) if t.status is TrackStatus.TENTATIVE]

    # stage 1: established tracks against high-score detections
    m1, lt1, ld1 = _associate_by_iou(boxes[est_rows], det_rows[high_idx], cfg)
    left_rows = [est_rows[r] for r in lt1]
    left_high_idx = [high_idx[c] for c in ld1]
    # stage 2: what remains of those tracks against the low-score band
    m2, lt2, _ = _associate_by_iou(boxes[left_rows], det_rows[low_idx], cfg)
    # stage 3: tentative tracks get a shot at the unclaimed high detections
    m3, lt3, ld3 = _associate_by_iou(boxes[ten_rows], det_rows[left_high_idx], cfg)

    pair_rows = (
        [est_rows[r] for r, _ in m1]
        + [left_rows[r] for r, _ in m2]
        + [ten_rows[r] for r, _ in m3]
    )
    pair_dets = (
        [high_idx[c] for _, c in m1]
        + [low_idx[c] for _, c in m2]
        + [left_high_idx[c] for _, c in m3]
    )
    pairs = [(live[r], dets[c]) for r, c in zip(pair_rows, pair_dets)]
    confs = np.asarray([d.confidence for d in dets], dtype=np.float64)
    _apply_matches(
        pairs,
        pair_rows,
        pair_dets,
        (means, covs, _cxcyah_rows(det_rows), confs),
        cfg,
        kf_cfg,
    )
    for r in lt2:
        _apply_miss(live[left_rows[r]], cfg)
    for r in lt3:
        _apply_miss(live[ten_rows[r]], cfg)

    out = list(tracks)
    nid = _next_id(tracks)
    for c in ld3:
        out.append(_birth(nid, dets[left_high_idx[c]], cfg, kf_cfg))
        nid += 1
    return tuple(out)


def _cosine_distance_matrix(tracks, dets, dim: int) -> np.ndarray:
    """1 - cosine similarity; pairs lacking a vector fall back to 1."""
    out = np.ones((len(tracks), len(dets)))
    t_has = [t.embedding is not None for t in tracks]
    d_has = [d.embedding is not None for d in dets]
    for j, det in enumerate(dets):
        if d_has[j] and det.embedding.shape[0] != dim:
            raise ValueError(
                f"embedding dimension mismatch: expected {dim}, "
                f"got {det.embedding.shape[0]}"
            )
    for i, track in enumerate(tracks):
        if not t_has[i]:
            continue
        for j, det in enumerate(dets):
            if d_has[j]:
                out[i, j] = 1.0 - float(np.dot(track.embedding, det.embedding))
    return out


def _embedding_dim(tracks, dets) -> Optional[int]:
    for t in tracks:
        if t.embedding is not None:
            return int(t.embedding.shape[0])
    for d in dets:
        if d.embedding is not None:
            return int(d.embedding.shape[0])
    return None


def strongsort_step(
    tracks: Sequence[Track], frame: FrameDetections, cfg: TrackerConfig
) -> tuple:
    """Advance one frame with the appearance-and-motion associator.

    Cost per cell is lambda * cosine distance + (1 - lambda) * (1 - IoU),
    infeasible when the squared Mahalanobis distance exceeds the gate.
    Kalman updates scale measurement noise by detection confidence.
    """
    kf_cfg = NoiseConfig(nsa_enabled=True)
    live, means, covs = _begin_step(tracks, frame, kf_cfg)

    dets = [
        d
        for d in frame.detections
        if d.confidence >= cfg.detection_confidence_floor
    ]

    lam = cfg.appearance_weight
    if dets and all(d.embedding is None for d in dets):
        if lam != 0.0:
            warnings.warn(
                "detections carry no embeddings; "
                "appearance weight forced to 0 (motion-only association)",
                RuntimeWarning,
                stacklevel=2,
            )
        lam = 0.0

    pairs: list = []
    pair_rows: list = []
    pair_dets: list = []
    left_tracks: list = list(live)
    left_dets: list = list(dets)
    measurements = np.zeros((0, 4))
    confs = np.zeros(0)
    if live and dets:
        dim = _embedding_dim(live, dets)
        if lam > 0.0 and dim is not None:
            appearance = _cosine_distance_matrix(live, dets, dim)
        else:
            appearance = np.zeros((len(live), len(dets)))
            lam = 0.0
        det_rows = _det_boxes(dets)
        costs = lam * appearance + (1.0 - lam) * _iou_cost(
            _predicted_boxes(means), det_rows
        )
        measurements = _cxcyah_rows(det_rows)
        confs = np.asarray([d.confidence for d in dets], dtype=np.float64)
        dist = gating_distance_matrix(
            [t.state for t in live],
            measurements,
            kf_cfg,
            state_arrays=(means, covs),
        )
        costs[dist > cfg.mahalanobis_gate] = FORBIDDEN
        costs = gate(costs, _COST_CEILING)
        result = solve(costs)
        pairs = [(live[r], dets[c]) for r, c in result.matches]
        pair_rows = [r for r, _ in result.matches]
        pair_dets = [c for _, c in result.matches]
        left_tracks = [live[r] for r in result.unmatched_rows]
        left_dets = [dets[c] for c in result.unmatched_cols]

    _apply_matches(
        pairs, pair_rows, pair_dets, (means, covs, measurements, confs), cfg, kf_cfg
    )
    for track, det in pairs:
        if det.embedding is not None:
            if track.embedding is None:
                track.embedding = det.embedding
            else:
                raw = (
                    cfg.ema_alpha * track.embedding.astype(np.float64)
                    + (1.0 - cfg.ema_alpha) * det.embedding.astype(np.float64)
                )
                norm = float(np.linalg.norm(raw))
                if norm <= 0.0:
                    raise ValueError("EMA produced a zero embedding")
                track.embedding = _checked_embedding(
                    (raw / norm).astype(np.float32)
                )
    for track in left_tracks:
        _apply_miss(track, cfg)

    out = list(tracks)
    nid = _next_id(tracks)
    for det in left_dets:
        out.append(_birth(nid, det, cfg, kf_cfg))
        nid += 1
    return tuple(out)


class Tracker:
    """Stateful wrapper that owns frame ordering and the track history.

    Strictly sequential: feed frames in increasing frame_index order.
    Distinct instances share nothing and may run in parallel.
    """

    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        self._tracks: tuple = ()
        self._last_frame_index = -1
        self._step = (
            bytetrack_step if cfg.algorithm == "bytetrack" else strongsort_step
        )

    @property
    def all_tracks(self) -> tuple:
        return self._tracks

    @property
    def live_tracks(self) -> tuple:
        return tuple(
            t for t in self._tracks if t.status is not TrackStatus.REMOVED
        )

    @property
    def unique_id_count(self) -> int:
        return unique_id_count(self._tracks)

    def step(self, frame: FrameDetections) -> tuple:
        """Process one frame; returns the live tracks afterwards."""
        if frame.frame_index == self._last_frame_index:
            raise ValueError(f"duplicate frame_index {frame.frame_index}")
        if frame.frame_index < self._last_frame_index:
            raise ValueError(
                f"out-of-order frame_index {frame.frame_index} "
                f"after {self._last_frame_index}"
            )
        self._tracks = self._step(self._tracks, frame, self.cfg)
        self._last_frame_index = frame.frame_index
        return self.live_tracks
