"""Deterministic seed-flow simulator.

Produces ground-truth trajectories plus a corrupted detection stream;
serves as the oracle for the tracking and counting pipeline. Two RNG
streams derive from the scenario seed: one for kinematics, one for
detection corruption, so miss-rate variants share exact trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import (
    BBox,
    Detection,
    DetectionStream,
    FrameDetections,
    _unchecked_bbox,
)

_MIN_BOX_SIDE = 2.0


@dataclass(frozen=True)
class SimScenario:
    """Scenario knobs. The defaults are the frozen noisy profile used
    by the frame-rate trend checks; helpers below derive the other
    committed profiles. Tuned once; not to be adjusted per-test.

    Speeds are px/s; per-frame displacement is speed/fps. seed_size
    maps class id to box dimensions as (class_id, width, height) rows.
    """

    rng_seed: int = 0
    fps: float = 120.0
    n_seeds: int = 250
    frame_w: float = 720.0
    frame_h: float = 1280.0
    spawn_interval_mean_s: float = 0.25
    mean_speed: float = 200.0
    lateral_jitter_std: float = 40.0
    collision_deflect_prob: float = 0.35
    collision_deflect_std: float = 80.0
    cluster_iou_threshold: float = 0.3
    p_miss: float = 0.04
    clutter_rate: float = 0.3
    detection_noise_px: float = 1.0
    base_conf: float = 0.9
    conf_jitter_std: float = 0.03
    occlusion_penalty: float = 0.3
    occlusion_iou_threshold: float = 0.05
    merged_conf: float = 0.3
    clutter_conf_range: Tuple[float, float] = (0.1, 0.35)
    seed_size: Tuple[Tuple[int, float, float], ...] = ((0, 26.0, 22.0),)

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.frame_w <= 0 or self.frame_h <= 0:
            raise ValueError("frame dimensions must be positive")
        if self.spawn_interval_mean_s <= 0:
            raise ValueError("spawn_interval_mean_s must be positive")
        if self.mean_speed <= 0:
            raise ValueError("mean_speed must be positive")
        for name in (
            "collision_deflect_prob",
            "p_miss",
            "base_conf",
            "merged_conf",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in (
            "lateral_jitter_std",
            "collision_deflect_std",
            "detection_noise_px",
            "conf_jitter_std",
            "clutter_rate",
            "occlusion_penalty",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.cluster_iou_threshold <= 0:
            raise ValueError("cluster_iou_threshold must be positive")
        lo, hi = self.clutter_conf_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("clutter_conf_range must be ordered within [0, 1]")
        if not self.seed_size:
            raise ValueError("seed_size needs at least one class entry")
        for row in self.seed_size:
            cid, w, h = row
            if cid < 0 or w <= 0 or h <= 0:
                raise ValueError(f"bad seed_size row {row}")

    def class_dims(self) -> Dict[int, Tuple[float, float]]:
        return {int(c): (float(w), float(h)) for c, w, h in self.seed_size}


def perfect_scenario(
    rng_seed: int = 0, fps: float = 120.0, n_seeds: int = 250
) -> SimScenario:
    """Every corruption path off: exact boxes, constant confidence."""
    return SimScenario(
        rng_seed=rng_seed,
        fps=fps,
        n_seeds=n_seeds,
        spawn_interval_mean_s=0.2,
        lateral_jitter_std=0.0,
        collision_deflect_prob=0.0,
        collision_deflect_std=0.0,
        cluster_iou_threshold=1.0,
        p_miss=0.0,
        clutter_rate=0.0,
        detection_noise_px=0.0,
        conf_jitter_std=0.0,
        occlusion_penalty=0.0,
    )


def clustering_scenario(
    rng_seed: int = 0, fps: float = 120.0, n_seeds: int = 250
) -> SimScenario:
    """Dense flow where touching seeds merge into single detections.

    Detection noise is kept low so merging stays the dominant error
    source; at 1 px the chi-square gate of the appearance tracker
    rejects enough honest boxes to flood the run with duplicate ids.
    """
    return SimScenario(
        rng_seed=rng_seed,
        fps=fps,
        n_seeds=n_seeds,
        spawn_interval_mean_s=0.06,
        lateral_jitter_std=25.0,
        collision_deflect_prob=0.35,
        collision_deflect_std=60.0,
        p_miss=0.02,
        clutter_rate=0.2,
        detection_noise_px=0.5,
    )


def fragmentation_scenario(
    rng_seed: int = 0, fps: float = 120.0, p_miss: float = 0.3, n_seeds: int = 250
) -> SimScenario:
    """Heavy per-frame miss rate; tracks shatter into extra ids."""
    return replace(
        SimScenario(rng_seed=rng_seed, fps=fps, n_seeds=n_seeds), p_miss=p_miss
    )


def occlusion_scenario(
    rng_seed: int = 0, fps: float = 60.0, n_seeds: int = 250
) -> SimScenario:
    """Frequent partial occlusions that pull confidences into the
    low-score band, exercising second-stage association."""
    return SimScenario(
        rng_seed=rng_seed,
        fps=fps,
        n_seeds=n_seeds,
        spawn_interval_mean_s=0.08,
        lateral_jitter_std=20.0,
        collision_deflect_prob=0.3,
        collision_deflect_std=50.0,
        p_miss=0.02,
        clutter_rate=0.2,
        occlusion_penalty=0.55,
        conf_jitter_std=0.02,
    )


@dataclass
class GroundTruth:
    """True trajectories keyed by seed id (1-based), frame-indexed."""

    trajectories: Dict[int, Dict[int, BBox]]
    visibility: Dict[int, Dict[int, bool]]
    class_ids: Dict[int, int]
    true_count: int
    n_frames: int
    fps: float
    frame_w: float
    frame_h: float

    def __post_init__(self):
        if self.true_count != len(self.trajectories):
            raise ValueError("true_count must equal the number of seeds")


def _pairwise_iou(boxes: List[BBox]) -> np.ndarray:
    n = len(boxes)
    if n < 2:
        return np.zeros((n, n))
    arr = np.asarray(
        [(b.x_min, b.y_min, b.width, b.height) for b in boxes]
    )
    x1, y1 = arr[:, 0], arr[:, 1]
    x2, y2 = x1 + arr[:, 2], y1 + arr[:, 3]
    iw = np.minimum(x2[:, None], x2[None, :]) - np.maximum(
        x1[:, None], x1[None, :]
    )
    ih = np.minimum(y2[:, None], y2[None, :]) - np.maximum(
        y1[:, None], y1[None, :]
    )
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    areas = arr[:, 2] * arr[:, 3]
    union = areas[:, None] + areas[None, :] - inter
    out = inter / union
    np.fill_diagonal(out, 0.0)
    return out


def _merge_groups(iou: np.ndarray, kappa: float) -> List[List[int]]:
    """Connected components of the overlap graph (edges at IoU > kappa)."""
    n = iou.shape[0]
    adj = iou > kappa
    seen = np.zeros(n, dtype=bool)
    groups: List[List[int]] = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in np.flatnonzero(adj[i]):
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        groups.append(sorted(comp))
    return groups


def _union_box(boxes: List[BBox]) -> BBox:
    x1 = min(b.x_min for b in boxes)
    y1 = min(b.y_min for b in boxes)
    x2 = max(b.x_max for b in boxes)
    y2 = max(b.y_max for b in boxes)
    return BBox(x1, y1, x2 - x1, y2 - y1)


class _Seed:
    __slots__ = ("sid", "class_id", "w", "h", "x", "y", "vx", "vy", "active", "exited")

    def __init__(self, sid, class_id, w, h, x, vy):
        self.sid = sid
        self.class_id = class_id
        self.w = w
        self.h = h
        self.x = x
        self.y = -h
        self.vx = 0.0
        self.vy = vy
        self.active = False
        self.exited = False

    def box(self) -> BBox:
        # positive dims and finite coords hold by construction
        return _unchecked_bbox(self.x, self.y, self.w, self.h)


def simulate(scenario: SimScenario) -> Tuple[GroundTruth, DetectionStream]:
    """Run the scenario; returns trajectories and the corrupted stream."""
    s = scenario
    rng_kin = np.random.default_rng([s.rng_seed, 1])
    rng_det = np.random.default_rng([s.rng_seed, 2])
    dt = 1.0 / s.fps
    dims = s.class_dims()
    class_keys = sorted(dims)

    intervals = rng_kin.exponential(s.spawn_interval_mean_s, s.n_seeds)
    spawn_times = np.cumsum(intervals)
    class_picks = rng_kin.integers(0, len(class_keys), s.n_seeds)
    seeds: List[_Seed] = []
    spawn_frames: List[int] = []
    for i in range(s.n_seeds):
        cid = class_keys[int(class_picks[i])]
        w, h = dims[cid]
        x = float(rng_kin.uniform(0.0, max(s.frame_w - w, 0.0)))
        seeds.append(_Seed(i + 1, cid, w, h, x, s.mean_speed))
        spawn_frames.append(int(math.ceil(spawn_times[i] * s.fps)))

    travel_s = (s.frame_h + 2.0 * max(h for _, h in dims.values())) / s.mean_speed
    n_frames = int(math.ceil((spawn_times[-1] + travel_s + 1.0) * s.fps)) + 2

    trajectories: Dict[int, Dict[int, BBox]] = {sd.sid: {} for sd in seeds}
    visibility: Dict[int, Dict[int, bool]] = {sd.sid: {} for sd in seeds}
    class_ids = {sd.sid: sd.class_id for sd in seeds}
    frames: List[FrameDetections] = []
    contacts_prev: set = set()
    kinematic_noise = (
        s.lateral_jitter_std > 0 or s.collision_deflect_prob > 0
    )

    for k in range(n_frames):
        for i, sd in enumerate(seeds):
            if not sd.active and not sd.exited and spawn_frames[i] <= k:
                sd.active = True
        active = [sd for sd in seeds if sd.active]

        if active and s.lateral_jitter_std > 0:
            jitter = rng_kin.normal(0.0, s.lateral_jitter_std, len(active))
        else:
            jitter = np.zeros(len(active))
        for idx, sd in enumerate(active):
            sd.x += (sd.vx + float(jitter[idx])) * dt
            sd.y += sd.vy * dt
            # chute walls: reflect sideways drift back into the frame
            lim = max(s.frame_w - sd.w, 0.0)
            if sd.x < 0.0:
                sd.x = min(-sd.x, lim)
                sd.vx = abs(sd.vx)
            elif sd.x > lim:
                sd.x = max(lim - (sd.x - lim), 0.0)
                sd.vx = -abs(sd.vx)
            if sd.y > s.frame_h:
                sd.active = False
                sd.exited = True
        active = [sd for sd in active if sd.active]

        boxes = [sd.box() for sd in active]
        # pairwise overlap feeds contacts, merging, and occlusion flags;
        # none are needed when all three effects are switched off
        need_iou = len(boxes) > 1 and (
            s.collision_deflect_prob > 0
            or s.cluster_iou_threshold < 1.0
            or s.occlusion_penalty != 0.0
        )
        iou = (
            _pairwise_iou(boxes)
            if need_iou
            else np.zeros((len(boxes), len(boxes)))
        )

        if s.collision_deflect_prob > 0 and len(active) > 1:
            touching = np.argwhere(np.triu(iou > 0.0, k=1))
            contacts_now = {
                (active[a].sid, active[b].sid) for a, b in touching
            }
            for pair in sorted(contacts_now - contacts_prev):
                for sid in pair:
                    if rng_kin.random() < s.collision_deflect_prob:
                        sd = seeds[sid - 1]
                        sd.vx += float(
                            rng_kin.normal(0.0, s.collision_deflect_std)
                        )
            contacts_prev = contacts_now
        else:
            contacts_prev = set()

        visible_idx = []
        for idx, sd in enumerate(active):
            box = boxes[idx]
            vis = (
                box.x_min >= 0.0
                and box.y_min >= 0.0
                and box.x_max <= s.frame_w
                and box.y_max <= s.frame_h
            )
            trajectories[sd.sid][k] = box
            visibility[sd.sid][k] = vis
            if vis:
                visible_idx.append(idx)

        detections: List[Detection] = []
        if visible_idx:
            vis_boxes = [boxes[i] for i in visible_idx]
            if need_iou:
                sub = iou[np.ix_(visible_idx, visible_idx)]
                groups = _merge_groups(sub, s.cluster_iou_threshold)
                occluded = (
                    sub.max(axis=1) > s.occlusion_iou_threshold
                    if len(vis_boxes) > 1
                    else np.zeros(len(vis_boxes), dtype=bool)
                )
            else:
                groups = [[g] for g in range(len(vis_boxes))]
                occluded = np.zeros(len(vis_boxes), dtype=bool)
            for group in groups:
                if rng_det.random() < s.p_miss:
                    continue
                if len(group) == 1:
                    g = group[0]
                    box = vis_boxes[g]
                    conf_mid = s.base_conf - (
                        s.occlusion_penalty if occluded[g] else 0.0
                    )
                    conf_lo, conf_hi = 0.0, 1.0
                    cid = active[visible_idx[g]].class_id
                else:
                    box = _union_box([vis_boxes[g] for g in group])
                    conf_mid = s.merged_conf
                    conf_lo, conf_hi = 0.05, 0.35
                    cid = active[visible_idx[group[0]]].class_id
                noise = rng_det.normal(0.0, s.detection_noise_px, 4)
                conf_noise = rng_det.normal(0.0, s.conf_jitter_std)
                jittered = _unchecked_bbox(
                    box.x_min + float(noise[0]),
                    box.y_min + float(noise[1]),
                    max(box.width + float(noise[2]), _MIN_BOX_SIDE),
                    max(box.height + float(noise[3]), _MIN_BOX_SIDE),
                )
                conf = min(max(conf_mid + float(conf_noise), conf_lo), conf_hi)
                detections.append(
                    Detection(bbox=jittered, confidence=conf, class_id=cid)
                )

        if s.clutter_rate > 0:
            for _ in range(int(rng_det.poisson(s.clutter_rate))):
                cid = class_keys[int(rng_det.integers(0, len(class_keys)))]
                w0, h0 = dims[cid]
                scale = float(rng_det.uniform(0.5, 1.5))
                cw, ch = w0 * scale, h0 * scale
                cx = float(rng_det.uniform(0.0, max(s.frame_w - cw, 0.0)))
                cy = float(rng_det.uniform(0.0, max(s.frame_h - ch, 0.0)))
                lo, hi = s.clutter_conf_range
                conf = float(rng_det.uniform(lo, hi))
                detections.append(
                    Detection(
                        bbox=_unchecked_bbox(cx, cy, cw, ch),
                        confidence=conf,
                        class_id=cid,
                    )
                )

        frames.append(
            FrameDetections(
                frame_index=k,
                timestamp_s=k * dt,
                detections=tuple(detections),
            )
        )

    gt = GroundTruth(
        trajectories=trajectories,
        visibility=visibility,
        class_ids=class_ids,
        true_count=s.n_seeds,
        n_frames=n_frames,
        fps=s.fps,
        frame_w=s.frame_w,
        frame_h=s.frame_h,
    )
    return gt, DetectionStream(fps=s.fps, frames=frames)


def replay(gt: GroundTruth, fps: Optional[float] = None) -> DetectionStream:
    """Perfect-detector stream: exact visible boxes at confidence 1."""
    fps = gt.fps if fps is None else fps
    if fps <= 0:
        raise ValueError("fps must be positive")
    per_frame: List[List[Detection]] = [[] for _ in range(gt.n_frames)]
    for sid in sorted(gt.trajectories):
        traj = gt.trajectories[sid]
        vis = gt.visibility[sid]
        for k in sorted(traj):
            if vis.get(k, False):
                per_frame[k].append(
                    Detection(
                        bbox=traj[k],
                        confidence=1.0,
                        class_id=gt.class_ids[sid],
                    )
                )
    frames = [
        FrameDetections(
            frame_index=k,
            timestamp_s=k / fps,
            detections=tuple(dets),
        )
        for k, dets in enumerate(per_frame)
    ]
    return DetectionStream(fps=fps, frames=frames)
