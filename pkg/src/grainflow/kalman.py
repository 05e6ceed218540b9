"""Constant-velocity Kalman filter over box states.

State is 8-dimensional: (cx, cy, a, h, vcx, vcy, va, vh) with a = w/h and
dt = 1 frame. Process and measurement noise scale with the box height, the
usual SORT-family convention. Functions are pure: they never mutate their
input state and are safe to use concurrently on distinct states.

When NoiseConfig.nsa_enabled is set, update() scales the measurement noise
by (1 - confidence), so a confidence-1.0 measurement is trusted exactly and
a confidence-0.0 measurement behaves like the standard filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# 95th percentile of chi-square with 4 degrees of freedom; the customary
# gate for squared Mahalanobis distances in (cx, cy, a, h) space.
CHI2_GATE_95_4DOF = 9.4877

_DIM = 8
_F = np.eye(_DIM)
_F[:4, 4:] = np.eye(4)
_F_T = _F.T.copy()
_H = np.zeros((4, _DIM))
_H[:4, :4] = np.eye(4)
_EYE = np.eye(_DIM)
_F.setflags(write=False)
_F_T.setflags(write=False)
_H.setflags(write=False)
_EYE.setflags(write=False)


class DegenerateStateError(ValueError):
    """Innovation covariance is singular; the state cannot absorb an update."""


@dataclass(frozen=True)
class NoiseConfig:
    std_weight_position: float = 1.0 / 20.0
    std_weight_velocity: float = 1.0 / 160.0
    nsa_enabled: bool = False

    def __post_init__(self):
        if self.std_weight_position <= 0 or self.std_weight_velocity <= 0:
            raise ValueError("noise weights must be positive")


@dataclass(frozen=True)
class KalmanState:
    """Gaussian belief over one box. Arrays are copied and frozen on entry."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        cov = np.array(self.covariance, dtype=np.float64)
        if mean.shape != (_DIM,) or cov.shape != (_DIM, _DIM):
            raise ValueError(
                f"expected mean ({_DIM},) and covariance ({_DIM},{_DIM}), "
                f"got {mean.shape} and {cov.shape}"
            )
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ValueError("state mean and covariance must be finite")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-9 * scale:
            raise ValueError("covariance must be symmetric")
        if np.any(np.diag(cov) < 0):
            raise ValueError("covariance diagonal must be non-negative")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


def _make_state(mean: np.ndarray, cov: np.ndarray) -> KalmanState:
    """Internal constructor for transition outputs.

    Shape and symmetry hold by construction there, so only finiteness is
    rechecked; external inputs must go through KalmanState itself.
    """
    if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
        raise ValueError("state mean and covariance must be finite")
    return _wrap_state(mean, cov)


def _wrap_state(mean: np.ndarray, cov: np.ndarray) -> KalmanState:
    mean.setflags(write=False)
    cov.setflags(write=False)
    state = KalmanState.__new__(KalmanState)
    object.__setattr__(state, "mean", mean)
    object.__setattr__(state, "covariance", cov)
    return state


def _wrap_states(means: np.ndarray, covs: np.ndarray) -> list[KalmanState]:
    """Batch variant of _make_state: one finiteness reduction for all."""
    if not (np.isfinite(means).all() and np.isfinite(covs).all()):
        raise ValueError("state mean and covariance must be finite")
    return [_wrap_state(means[i], covs[i]) for i in range(means.shape[0])]


def initiate(measurement, cfg: NoiseConfig) -> KalmanState:
    """Start a new state from one measurement; velocities start at zero.

    `measurement` is a BBox or a (cx, cy, a, h) vector.
    """
    z = _as_measurement(measurement)
    mean = np.zeros(_DIM)
    mean[:4] = z
    h = z[3]
    std = np.array(
        [
            2 * cfg.std_weight_position * h,
            2 * cfg.std_weight_position * h,
            1e-2,
            2 * cfg.std_weight_position * h,
            10 * cfg.std_weight_velocity * h,
            10 * cfg.std_weight_velocity * h,
            1e-5,
            10 * cfg.std_weight_velocity * h,
        ]
    )
    return KalmanState(mean, np.diag(std * std))


def predict(state: KalmanState, cfg: NoiseConfig) -> KalmanState:
    """Advance one frame under constant velocity."""
    h = state.mean[3]
    sp = cfg.std_weight_position * h
    sv = cfg.std_weight_velocity * h
    p2 = sp * sp
    v2 = sv * sv
    mean = _F @ state.mean
    cov = _F @ state.covariance @ _F_T
    cov.flat[::_DIM + 1] += (p2, p2, 1e-4, p2, v2, v2, 1e-10, v2)
    return _make_state(mean, cov)


def update(state: KalmanState, measurement, confidence: float, cfg: NoiseConfig) -> KalmanState:
    """Fold one measurement into the state.

    Raises ValueError for a non-finite measurement or out-of-range confidence,
    DegenerateStateError when the innovation covariance is singular.
    """
    z = _as_measurement(measurement)
    if not np.isfinite(z).all():
        raise ValueError(f"measurement must be finite, got {z}")
    if not (math.isfinite(confidence) and 0.0 <= confidence <= 1.0):
        raise ValueError(f"confidence must be in [0, 1], got {confidence}")

    r_diag = _measurement_noise_diag(state, cfg)
    if cfg.nsa_enabled:
        r_diag = (1.0 - confidence) * r_diag

    cov_prior = state.covariance
    s = cov_prior[:4, :4].copy()
    s.flat[::5] += r_diag
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise DegenerateStateError(f"singular innovation covariance: {exc}") from exc

    # The Cholesky above is the positive-definiteness check; the gain then
    # comes from one dense solve rather than an explicit inverse.
    k = np.linalg.solve(s, cov_prior[:4, :]).T
    innovation = z - state.mean[:4]
    mean = state.mean + k @ innovation
    ikh = np.eye(_DIM)
    ikh[:, :4] -= k
    cov = ikh @ cov_prior @ ikh.T + (k * r_diag) @ k.T
    cov = (cov + cov.T) / 2.0
    return _make_state(mean, cov)


def predict_batch(states, cfg: NoiseConfig) -> list[KalmanState]:
    """predict() over many states with one set of stacked array ops."""
    return predict_batch_with_arrays(states, cfg)[0]


def predict_batch_with_arrays(states, cfg: NoiseConfig):
    """predict_batch plus the stacked arrays backing the new states.

    Returns (states, means, covs) where states[i] wraps row i of the two
    arrays. Row-aligned slices can feed update_batch and
    gating_distance_matrix directly, saving a restack per call; the arrays
    come back read-only so the shared storage stays safe.
    """
    if not states:
        return [], np.zeros((0, _DIM)), np.zeros((0, _DIM, _DIM))
    means = np.stack([s.mean for s in states])
    covs = np.stack([s.covariance for s in states])
    h = means[:, 3]
    p2 = (cfg.std_weight_position * h) ** 2
    v2 = (cfg.std_weight_velocity * h) ** 2
    q = np.empty((len(states), _DIM))
    q[:, 0] = q[:, 1] = q[:, 3] = p2
    q[:, 4] = q[:, 5] = q[:, 7] = v2
    q[:, 2] = 1e-4
    q[:, 6] = 1e-10
    means = means @ _F_T
    covs = _F[None] @ covs @ _F_T[None]
    idx = np.arange(_DIM)
    covs[:, idx, idx] += q
    wrapped = _wrap_states(means, covs)
    means.setflags(write=False)
    covs.setflags(write=False)
    return wrapped, means, covs


def update_batch(
    states, zs, confidences, cfg: NoiseConfig, state_arrays=None
) -> list[KalmanState]:
    """update() over many (state, measurement, confidence) triples at once.

    Falls back to per-state updates when the stacked Cholesky fails, so a
    single degenerate state raises the same error update() would.
    state_arrays, when given, is the stacked (means, covs) pair aligned
    with states; it is read, never written.
    """
    n = len(states)
    if n == 0:
        return []
    zs = _as_measurement_rows(zs).reshape(n, 4)
    confs = np.asarray(confidences, dtype=np.float64).reshape(n)
    if not np.isfinite(zs).all():
        raise ValueError("measurements must be finite")
    if not (np.isfinite(confs).all() and (confs >= 0.0).all() and (confs <= 1.0).all()):
        raise ValueError("confidences must be in [0, 1]")
    if state_arrays is None:
        means = np.stack([s.mean for s in states])
        covs = np.stack([s.covariance for s in states])
    else:
        means, covs = state_arrays

    h = means[:, 3]
    p2 = (cfg.std_weight_position * h) ** 2
    r = np.empty((n, 4))
    r[:, 0] = r[:, 1] = r[:, 3] = p2
    r[:, 2] = 1e-2
    if cfg.nsa_enabled:
        r = (1.0 - confs)[:, None] * r

    s = covs[:, :4, :4].copy()
    idx = np.arange(4)
    s[:, idx, idx] += r
    try:
        np.linalg.cholesky(s)
        k = np.linalg.solve(s, covs[:, :4, :]).transpose(0, 2, 1)
    except np.linalg.LinAlgError:
        return [
            update(states[i], zs[i], float(confs[i]), cfg) for i in range(n)
        ]

    innovation = zs - means[:, :4]
    means = means + (k @ innovation[:, :, None])[:, :, 0]
    ikh = np.broadcast_to(_EYE, (n, _DIM, _DIM)).copy()
    ikh[:, :, :4] -= k
    covs = ikh @ covs @ ikh.transpose(0, 2, 1) + (k * r[:, None, :]) @ k.transpose(0, 2, 1)
    covs = (covs + covs.transpose(0, 2, 1)) / 2.0
    return _wrap_states(means, covs)


def gating_distance_matrix(
    states, measurements, cfg: NoiseConfig, state_arrays=None
) -> np.ndarray:
    """Squared Mahalanobis distances, shape (len(states), len(measurements)).

    `measurements` may be an (m, 4) array or an iterable of BBoxes/rows.
    state_arrays, when given, is the stacked (means, covs) pair aligned
    with states; it is read, never written.
    """
    zs = _as_measurement_rows(measurements)
    n, m = len(states), zs.shape[0]
    if n == 0 or m == 0:
        return np.zeros((n, m))
    if state_arrays is None:
        means = np.stack([s.mean[:4] for s in states])
        covs = np.stack([s.covariance[:4, :4] for s in states])
    else:
        means = state_arrays[0][:, :4]
        covs = state_arrays[1][:, :4, :4].copy()
    h = means[:, 3]
    p2 = (cfg.std_weight_position * h) ** 2
    idx = np.arange(4)
    covs[:, idx, idx] += np.stack([p2, p2, np.full(n, 1e-2), p2], axis=1)
    try:
        chol = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateStateError(f"singular innovation covariance: {exc}") from exc
    diff = zs[None, :, :] - means[:, None, :]
    d = np.linalg.solve(chol, diff.transpose(0, 2, 1))
    return np.sum(d * d, axis=1)


def project(state: KalmanState, cfg: NoiseConfig) -> tuple[np.ndarray, np.ndarray]:
    """Measurement-space mean and covariance (including measurement noise)."""
    s = state.covariance[:4, :4].copy()
    s.flat[::5] += _measurement_noise_diag(state, cfg)
    return state.mean[:4].copy(), s


def gating_distance(state: KalmanState, measurement, cfg: NoiseConfig) -> float:
    """Squared Mahalanobis distance of a measurement from the state."""
    return float(gating_distance_batch(state, [_as_measurement(measurement)], cfg)[0])


def gating_distance_batch(state: KalmanState, measurements, cfg: NoiseConfig) -> np.ndarray:
    """Squared Mahalanobis distances for many measurements at once.

    `measurements` is an iterable of BBoxes or (cx, cy, a, h) rows; returns
    a float array of the same length.
    """
    zs = _as_measurement_rows(measurements)
    if zs.size == 0:
        return np.zeros(0)
    mean, s = project(state, cfg)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise DegenerateStateError(f"singular innovation covariance: {exc}") from exc
    d = np.linalg.solve(chol, (zs - mean).T)
    return np.sum(d * d, axis=0)


def _as_measurement(measurement) -> np.ndarray:
    if hasattr(measurement, "to_cxcyah"):
        return measurement.to_cxcyah()
    z = np.asarray(measurement, dtype=np.float64)
    if z.shape != (4,):
        raise ValueError(f"measurement must be a BBox or length-4 vector, got shape {z.shape}")
    return z


def _as_measurement_rows(measurements) -> np.ndarray:
    if isinstance(measurements, np.ndarray) and measurements.ndim == 2 and measurements.shape[1] == 4:
        return measurements.astype(np.float64, copy=False)
    rows = [_as_measurement(m) for m in measurements]
    if not rows:
        return np.zeros((0, 4))
    return np.asarray(rows, dtype=np.float64)


def _measurement_noise_diag(state: KalmanState, cfg: NoiseConfig) -> np.ndarray:
    h = state.mean[3]
    sp = cfg.std_weight_position * h
    p2 = sp * sp
    return np.array([p2, p2, 1e-2, p2])
