"""Uncertainty-aware matching between fused track predictions and detections.

A pair's score is ``0.7 * IoU + 0.2 * TrendSim + 0.1 * Penalty``; pairs whose
IoU falls below the 0.3 gate are excluded outright (they never reach the
solver as numbers).  Assignment maximizes the total score over the
remaining pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidMeasurementError

IOU_GATE = 0.3
SCORE_WEIGHTS = (0.7, 0.2, 0.1)
SIGMA_BAR_SQ_FLOOR = 1e-4
TREND_EPS = 1e-9


@dataclass
class Detection:
    box: np.ndarray  # [cx, cy, a, h]
    confidence: float
    frame: int = 0
    cls: int = 0

    def __post_init__(self) -> None:
        self.box = np.asarray(self.box, dtype=np.float64)
        if self.box.shape != (4,) or self.box[2] <= 0 or self.box[3] <= 0:
            raise InvalidMeasurementError(f"detection box must be [cx, cy, a>0, h>0], got {self.box.tolist()}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass
class ScoreMatrix:
    """Scores with an explicit validity mask; ``scores`` is NaN where gated."""

    scores: np.ndarray
    iou: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_dense(cls, scores, valid=None, iou=None) -> "ScoreMatrix":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 2:
            scores = scores.reshape(len(scores), -1) if scores.size else np.zeros((len(scores), 0))
        valid = np.ones(scores.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        iou = np.ones(scores.shape) if iou is None else np.asarray(iou, dtype=np.float64)
        return cls(np.where(valid, scores, np.nan), iou, valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


@dataclass
class Assignment:
    matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)


# ------------------------------------------------------------------ geometry
def cxcyah_to_corners(box) -> np.ndarray:
    """``[cx, cy, a, h]`` (or an (N, 4) array of them) to ``[x1, y1, x2, y2]``."""
    b = np.asarray(box, dtype=np.float64)
    if np.any(b[..., 2] <= 0) or np.any(b[..., 3] <= 0):
        raise InvalidMeasurementError(f"box extent must be positive, got {b.tolist()}")
    w = b[..., 2] * b[..., 3]
    h = b[..., 3]
    return np.stack([b[..., 0] - w / 2, b[..., 1] - h / 2, b[..., 0] + w / 2, b[..., 1] + h / 2], axis=-1)


def corners_to_cxcyah(box) -> np.ndarray:
    b = np.asarray(box, dtype=np.float64)
    w = b[..., 2] - b[..., 0]
    h = b[..., 3] - b[..., 1]
    return np.stack([(b[..., 0] + b[..., 2]) / 2, (b[..., 1] + b[..., 3]) / 2, w / h, h], axis=-1)


def iou(a, b) -> float:
    """IoU of two corner boxes."""
    return float(iou_matrix(np.asarray(a)[None], np.asarray(b)[None])[0, 0])


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between corner boxes (N, 4) and (M, 4)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0, None) * np.clip(iy2 - iy1, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


# ------------------------------------------------------------- score terms
def trend_sim(x_pred_t, x_pred_prev, det_box, trend_sign: str = "as_printed") -> float:
    """Cosine between the track's predicted displacement and the prediction-detection offset.

    ``trend_sign="as_printed"`` uses ``v_det = pred - det``; ``"reversed"``
    uses ``det - pred``.  Degenerate (near-zero) vectors give 0.
    """
    if x_pred_prev is None:
        return 0.0
    p = np.asarray(x_pred_t, dtype=np.float64)[:2]
    v_track = p - np.asarray(x_pred_prev, dtype=np.float64)[:2]
    v_det = p - np.asarray(det_box, dtype=np.float64)[:2]
    if trend_sign == "reversed":
        v_det = -v_det
    elif trend_sign != "as_printed":
        raise ValueError(f"trend_sign must be 'as_printed' or 'reversed', got {trend_sign!r}")
    nt = np.hypot(*v_track)
    nd = np.hypot(*v_det)
    if nt < TREND_EPS or nd < TREND_EPS:
        return 0.0
    return float(np.clip(v_track @ v_det / (nt * nd), -1.0, 1.0))


def uncertainty_penalty(x_pred, sigma_fuse, det_box) -> float:
    """``exp(-|pred_center - det_center|^2 / sigma_bar^2)`` with ``sigma_bar`` the mean center std."""
    sigma_bar = 0.5 * (float(sigma_fuse[0]) + float(sigma_fuse[1]))
    d2 = float(np.sum((np.asarray(x_pred, dtype=np.float64)[:2] - np.asarray(det_box, dtype=np.float64)[:2]) ** 2))
    return float(np.exp(-d2 / max(sigma_bar * sigma_bar, SIGMA_BAR_SQ_FLOOR)))


def match_score(iou_value, trend, penalty, weights: Sequence[float] = SCORE_WEIGHTS) -> float:
    w1, w2, w3 = weights
    # correctly rounded sum: the default weights give exactly 1.0 at (1, 1, 1)
    return math.fsum((w1 * iou_value, w2 * trend, w3 * penalty))


def build_score_matrix(pred_states: np.ndarray, pred_sigmas: np.ndarray, prev_preds: Sequence,
                       det_boxes: np.ndarray, *, iou_only: bool = False, iou_gate: float = IOU_GATE,
                       weights: Sequence[float] = SCORE_WEIGHTS, trend_sign: str = "as_printed",
                       track_cls=None, det_cls=None) -> ScoreMatrix:
    """Score every (track, detection) pair.

    ``pred_states`` (N, 8) fused predictions, ``pred_sigmas`` (N, 8),
    ``prev_preds`` length-N list of previous fused predictions (or None),
    ``det_boxes`` (M, 4) in cxcyah.  With ``iou_only`` the score is the IoU.
    """
    n, m = len(pred_states), len(det_boxes)
    if n == 0 or m == 0:
        empty = np.zeros((n, m))
        return ScoreMatrix(np.full((n, m), np.nan), empty, np.zeros((n, m), dtype=bool))
    ious = iou_matrix(cxcyah_to_corners(pred_states[:, :4]), cxcyah_to_corners(det_boxes))
    valid = ious >= iou_gate
    if track_cls is not None and det_cls is not None:
        valid &= np.asarray(track_cls)[:, None] == np.asarray(det_cls)[None, :]
    scores = np.full((n, m), np.nan)
    for i, j in zip(*np.nonzero(valid)):
        if iou_only:
            scores[i, j] = ious[i, j]
            continue
        t = trend_sim(pred_states[i], prev_preds[i], det_boxes[j], trend_sign)
        pen = uncertainty_penalty(pred_states[i], pred_sigmas[i], det_boxes[j])
        scores[i, j] = match_score(ious[i, j], t, pen, weights)
    return ScoreMatrix(scores, ious, valid)


# ---------------------------------------------------------------- solving
def solve_assignment(scores: ScoreMatrix) -> Assignment:
    """Maximum-total-score matching restricted to valid pairs.

    The problem is embedded in a square (N+M) cost matrix: every track may
    fall back to its own "unmatched" column and every detection to its own
    "unmatched" row at zero cost, so a perfect matching always exists and
    gated pairs are simply forbidden entries.
    """
    n, m = scores.shape
    if n == 0 or m == 0:
        return Assignment([], list(range(n)), list(range(m)))
    valid = scores.valid
    size = n + m
    forbidden = np.inf
    cost = np.full((size, size), forbidden)
    cost[:n, :m] = np.where(valid, -np.nan_to_num(scores.scores), forbidden)
    cost[np.arange(n), m + np.arange(n)] = 0.0
    cost[n + np.arange(m), np.arange(m)] = 0.0
    cost[n:, m:] = 0.0
    rows, cols = linear_sum_assignment(cost)
    matches = [(int(r), int(c)) for r, c in zip(rows, cols) if r < n and c < m]
    matches = [(r, c) for r, c in matches if valid[r, c]]
    matched_r = {r for r, _ in matches}
    matched_c = {c for _, c in matches}
    return Assignment(
        sorted(matches),
        [i for i in range(n) if i not in matched_r],
        [j for j in range(m) if j not in matched_c],
    )


def assignment_total(scores: ScoreMatrix, assignment: Assignment) -> float:
    return math.fsum(scores.scores[r, c] for r, c in sorted(assignment.matches))
