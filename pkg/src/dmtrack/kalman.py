"""Constant-velocity Kalman filter over the 8-dim box state.

State layout is ``[x, y, a, h, vx, vy, va, vh]``: box center, aspect ratio
(width / height), height, and their per-frame deltas.  Noise follows the
SORT family: position-like standard deviations scale with box height
(``1/20 * h``), velocity-like ones with ``1/160 * h``; the dimensionless
aspect ratio gets small fixed deviations instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMeasurementError, NumericalError

NDIM = 4
STATE_DIM = 8
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class KalmanTrackState:
    mean: np.ndarray
    covariance: np.ndarray

    def copy(self) -> "KalmanTrackState":
        return KalmanTrackState(self.mean.copy(), self.covariance.copy())


def transition_matrix(dt: float = 1.0) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[:NDIM, NDIM:] = dt * np.eye(NDIM)
    return F


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass
class KalmanFilter:
    """Pure-function Kalman filter; holds only noise configuration."""

    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160
    std_weight_measurement: float = 1.0 / 20
    aspect_std: float = 1e-2
    aspect_velocity_std: float = 1e-5

    def __post_init__(self) -> None:
        self._F = transition_matrix()
        self._H = np.eye(NDIM, STATE_DIM)

    def initiate(self, measurement) -> KalmanTrackState:
        z = np.asarray(measurement, dtype=np.float64)
        _check_measurement(z)
        h = z[3]
        mean = np.concatenate([z, np.zeros(NDIM)])
        std = np.array([
            2 * self.std_weight_position * h,
            2 * self.std_weight_position * h,
            self.aspect_std,
            2 * self.std_weight_position * h,
            10 * self.std_weight_velocity * h,
            10 * self.std_weight_velocity * h,
            self.aspect_velocity_std,
            10 * self.std_weight_velocity * h,
        ])
        return KalmanTrackState(mean, np.diag(std * std))

    def process_noise(self, mean: np.ndarray) -> np.ndarray:
        h = abs(mean[3])
        std = np.array([
            self.std_weight_position * h,
            self.std_weight_position * h,
            self.aspect_std,
            self.std_weight_position * h,
            self.std_weight_velocity * h,
            self.std_weight_velocity * h,
            self.aspect_velocity_std,
            self.std_weight_velocity * h,
        ])
        return np.diag(std * std)

    def measurement_noise(self, mean: np.ndarray) -> np.ndarray:
        h = abs(mean[3])
        std = np.array([
            self.std_weight_measurement * h,
            self.std_weight_measurement * h,
            self.aspect_std,
            self.std_weight_measurement * h,
        ])
        return np.diag(std * std)

    def predict(self, state: KalmanTrackState) -> KalmanTrackState:
        F = self._F
        mean = F @ state.mean
        cov = F @ state.covariance @ F.T + self.process_noise(state.mean)
        return KalmanTrackState(mean, _symmetrize(cov))

    def update(self, state: KalmanTrackState, measurement) -> KalmanTrackState:
        z = np.asarray(measurement, dtype=np.float64)
        H = self._H
        P = state.covariance
        S = H @ P @ H.T + self.measurement_noise(state.mean)
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > 1e14:
            raise NumericalError(f"innovation covariance is singular (condition number {cond:.3g})")
        PHt = P @ H.T
        gain = np.linalg.solve(S, PHt.T).T
        innovation = z - H @ state.mean
        mean = state.mean + gain @ innovation
        cov = P - gain @ S @ gain.T
        return KalmanTrackState(mean, _symmetrize(cov))


def sigma_diag(state: KalmanTrackState) -> np.ndarray:
    """Per-dimension standard deviations, floored at 1e-6."""
    return np.maximum(np.sqrt(np.clip(np.diag(state.covariance), 0.0, None)), SIGMA_FLOOR)


def _check_measurement(z: np.ndarray) -> None:
    if z.shape != (NDIM,):
        raise InvalidMeasurementError(f"measurement must be [cx, cy, a, h], got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidMeasurementError(f"non-finite measurement {z.tolist()}")
    if z[2] <= 0 or z[3] <= 0:
        raise InvalidMeasurementError(f"aspect ratio and height must be positive, got a={z[2]}, h={z[3]}")
