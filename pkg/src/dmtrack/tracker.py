"""Frame-by-frame multi-object tracker.

Per frame: Kalman predict, DeformMamba prediction from each track's recent
history, MotionGate fusion, then two-stage association (high-confidence
detections with the full score, leftover tracks against low-confidence
detections by IoU alone) and track lifecycle bookkeeping.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import mot_io
from .association import (
    IOU_GATE,
    SCORE_WEIGHTS,
    Detection,
    build_score_matrix,
    solve_assignment,
)
from .deform_mamba import STATE_DIM, WINDOW, pad_window
from .errors import ConfigError, DataError, InvalidMeasurementError, SequencingError
from .kalman import KalmanFilter, KalmanTrackState, sigma_diag
from .motion_gate import FusedPrediction
from .predictor import FUSION_MODES, MotionPredictor

MIN_EXTENT = 1e-3


class TrackStatus(Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    REMOVED = "removed"


@dataclass
class TrackerConfig:
    tau_high: float = 0.6
    tau_low: float = 0.1
    iou_gate: float = IOU_GATE
    n_init: int = 3
    max_age: int = 30
    weights: tuple[float, float, float] = SCORE_WEIGHTS
    trend_sign: str = "as_printed"
    fusion: str = "gate"
    association: str = "full"
    lost_history: str = "fused"

    def validate(self) -> None:
        if not 0.0 <= self.tau_low < self.tau_high <= 1.0:
            raise ConfigError(f"need 0 <= tau_low < tau_high <= 1, got {self.tau_low}, {self.tau_high}")
        if not 0.0 <= self.iou_gate <= 1.0:
            raise ConfigError(f"iou_gate must lie in [0, 1], got {self.iou_gate}")
        if self.n_init < 1 or self.max_age < 0:
            raise ConfigError("n_init must be >= 1 and max_age >= 0")
        if len(self.weights) != 3:
            raise ConfigError(f"weights must have three entries, got {self.weights}")
        if self.trend_sign not in ("as_printed", "reversed"):
            raise ConfigError(f"trend_sign must be 'as_printed' or 'reversed', got {self.trend_sign!r}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.lost_history not in ("fused", "kalman"):
            raise ConfigError(f"lost_history must be 'fused' or 'kalman', got {self.lost_history!r}")
        if self.association not in ("full", "iou"):
            raise ConfigError(f"association must be 'full' or 'iou', got {self.association!r}")


@dataclass
class Track:
    id: int
    kalman: KalmanTrackState
    status: TrackStatus = TrackStatus.TENTATIVE
    history: deque = field(default_factory=lambda: deque(maxlen=WINDOW))
    last_fused: FusedPrediction | None = None
    hits: int = 1
    time_since_update: int = 0
    cls: int = 0
    age: int = 1

    def window(self) -> np.ndarray:
        return pad_window(np.array(self.history)).states


def history_push(track: Track, state) -> None:
    """Append a box (first 4 entries of ``state``) with finite-difference velocities."""
    box = np.asarray(state, dtype=np.float64)[:4]
    if not np.all(np.isfinite(box)):
        raise InvalidMeasurementError(f"history entry must be finite, got {box.tolist()}")
    vel = box - track.history[-1][:4] if track.history else np.zeros(4)
    track.history.append(np.concatenate([box, vel]))


@dataclass
class FrameStats:
    """Per-frame partition of tracks and detections (indices into the step inputs)."""

    frame: int
    matched_tracks: list[int] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    matched_detections: list[int] = field(default_factory=list)
    new_detections: list[int] = field(default_factory=list)
    discarded_detections: list[int] = field(default_factory=list)


class Tracker:
    """Stateful tracker; call :meth:`step` once per consecutive frame."""

    def __init__(self, config: TrackerConfig | None = None, predictor: MotionPredictor | None = None,
                 kf: KalmanFilter | None = None) -> None:
        self.config = config or TrackerConfig()
        self.config.validate()
        if self.config.fusion != "kalman" and predictor is None:
            raise ConfigError(f"fusion mode {self.config.fusion!r} needs a trained predictor (checkpoint)")
        self.predictor = predictor
        self.kf = kf or KalmanFilter()
        self.tracks: list[Track] = []
        self.frame: int | None = None
        self.next_id = 1
        self.last_stats: FrameStats | None = None

    # ------------------------------------------------------------ prediction
    def _predict(self, tracks: Sequence[Track]) -> tuple[list[KalmanTrackState], FusedPrediction]:
        priors = [self.kf.predict(_freeze_height_velocity(t)) for t in tracks]
        if not tracks:
            empty = np.zeros((0, STATE_DIM))
            return priors, FusedPrediction(empty, empty.copy(), empty.copy())
        x_kal = np.stack([p.mean for p in priors])
        sigma_kal = np.stack([sigma_diag(p) for p in priors])
        if self.config.fusion == "kalman":
            fused = FusedPrediction(x_kal.copy(), sigma_kal, np.ones_like(x_kal))
        else:
            windows = np.stack([t.window() for t in tracks])
            fused = self.predictor.predict(windows, x_kal, sigma_kal, self.config.fusion)
        fused.x_fuse[:, 2:4] = np.maximum(fused.x_fuse[:, 2:4], MIN_EXTENT)
        return priors, fused

    # ------------------------------------------------------------------ step
    def step(self, frame: int, detections: Sequence[Detection]) -> list[tuple[int, np.ndarray, float]]:
        """Advance to ``frame`` and return ``(track id, [cx, cy, a, h], confidence)`` for confirmed tracks."""
        if self.frame is not None and frame != self.frame + 1:
            raise SequencingError(f"expected frame {self.frame + 1}, got {frame}")
        if self.frame is None and frame < 1:
            raise SequencingError(f"frame numbers start at 1, got {frame}")
        self.frame = frame
        cfg = self.config
        stats = FrameStats(frame)
        high = [i for i, d in enumerate(detections) if d.confidence >= cfg.tau_high]
        low = [i for i, d in enumerate(detections) if cfg.tau_low <= d.confidence < cfg.tau_high]

        tracks = self.tracks
        priors, fused = self._predict(tracks)
        prev_preds = [t.last_fused.x_fuse if t.last_fused is not None else None for t in tracks]
        for k, t in enumerate(tracks):
            t.last_fused = FusedPrediction(fused.x_fuse[k], fused.sigma_fuse[k], fused.alpha[k])
        track_cls = [t.cls for t in tracks]

        def associate(track_idx, det_idx, iou_only):
            if not track_idx or not det_idx:
                return [], list(track_idx), list(det_idx)
            sm = build_score_matrix(
                fused.x_fuse[track_idx], fused.sigma_fuse[track_idx], [prev_preds[k] for k in track_idx],
                np.stack([detections[j].box for j in det_idx]), iou_only=iou_only, iou_gate=cfg.iou_gate,
                weights=cfg.weights, trend_sign=cfg.trend_sign,
                track_cls=[track_cls[k] for k in track_idx], det_cls=[detections[j].cls for j in det_idx])
            res = solve_assignment(sm)
            return ([(track_idx[r], det_idx[c]) for r, c in res.matches],
                    [track_idx[r] for r in res.unmatched_tracks],
                    [det_idx[c] for c in res.unmatched_detections])

        m1, rest_tracks, rest_high = associate(list(range(len(tracks))), high, cfg.association == "iou")
        m2, unmatched, rest_low = associate(rest_tracks, low, True)
        matches = sorted(m1 + m2)

        out = []
        for k, j in matches:
            t, det = tracks[k], detections[j]
            t.kalman = self.kf.update(priors[k], det.box)
            history_push(t, t.kalman.mean)
            t.hits += 1
            t.time_since_update = 0
            t.age += 1
            if t.status is TrackStatus.TENTATIVE and t.hits >= cfg.n_init:
                t.status = TrackStatus.CONFIRMED
            if t.status is TrackStatus.CONFIRMED:
                out.append((t.id, t.kalman.mean[:4].copy(), float(det.confidence)))
        for k in unmatched:
            t = tracks[k]
            t.kalman = priors[k]
            history_push(t, t.last_fused.x_fuse if cfg.lost_history == "fused" else priors[k].mean)
            t.hits = 0
            t.time_since_update += 1
            t.age += 1
            if t.status is TrackStatus.TENTATIVE or t.time_since_update > cfg.max_age:
                t.status = TrackStatus.REMOVED

        survivors = [t for t in tracks if t.status is not TrackStatus.REMOVED]
        for j in rest_high:
            det = detections[j]
            t = Track(id=self.next_id, kalman=self.kf.initiate(det.box), cls=det.cls)
            history_push(t, det.box)
            self.next_id += 1
            survivors.append(t)
        self.tracks = survivors

        stats.matched_tracks = [k for k, _ in matches]
        stats.unmatched_tracks = sorted(unmatched)
        stats.matched_detections = sorted(j for _, j in matches)
        stats.new_detections = sorted(rest_high)
        stats.discarded_detections = sorted(
            set(range(len(detections))) - set(stats.matched_detections) - set(rest_high))
        self.last_stats = stats
        return sorted(out, key=lambda r: r[0])


def _freeze_height_velocity(track: Track) -> KalmanTrackState:
    """Lost tracks keep their size: the height velocity is zeroed before predicting (ByteTrack convention)."""
    if track.time_since_update == 0:
        return track.kalman
    mean = track.kalman.mean.copy()
    mean[7] = 0.0
    return KalmanTrackState(mean, track.kalman.covariance)


# ---------------------------------------------------------------- sequences
def detections_by_frame(dets: np.ndarray) -> dict[int, list[Detection]]:
    """Group an (N, 6) ``[frame, left, top, w, h, conf]`` array into per-frame Detection lists."""
    out: dict[int, list[Detection]] = {}
    for row in np.asarray(dets, dtype=np.float64).reshape(-1, 6):
        frame = int(row[0])
        if row[3] <= 0 or row[4] <= 0:
            raise DataError(f"frame {frame}: detection with non-positive size {row[3]}x{row[4]}")
        conf = min(max(float(row[5]), 0.0), 1.0)
        out.setdefault(frame, []).append(Detection(mot_io.tlwh_to_cxcyah(row[1:5]), conf, frame))
    return out


def run_tracker(dets: np.ndarray, tracker: Tracker, num_frames: int | None = None) -> list[tuple]:
    """Track a whole detection array; frames without detections are stepped as empty.

    Returns rows ``(frame, id, left, top, width, height, conf)``.
    """
    per_frame = detections_by_frame(dets)
    last = max(per_frame, default=0)
    if num_frames is not None:
        last = max(last, num_frames)
    rows = []
    for frame in range(1, last + 1):
        for tid, box, conf in tracker.step(frame, per_frame.get(frame, [])):
            rows.append((frame, tid, *mot_io.cxcyah_to_tlwh(box), conf))
    return rows


def format_results(rows) -> str:
    return mot_io.format_results(rows)
