"""CLEAR-MOT (MOTA, ID switches) and identity (IDF1) metrics.

Ground truth is an (N, >=6) array ``[frame, id, left, top, w, h, ...]`` and
results an (M, >=6) array with the same leading layout.  A ground-truth box
and an output box can match when their IoU is at least the threshold (0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .association import iou_matrix
from .errors import UndefinedMetricError

IOU_THRESHOLD = 0.5
SUMMARY_COLUMNS = ("mota", "idf1", "idsw", "fp", "fn", "tp", "num_gt", "idtp", "idfp", "idfn")


@dataclass
class FrameResult:
    frame: int
    tp: int
    fp: int
    fn: int
    idsw: int
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (gt id, track id)


@dataclass
class FrameMatching:
    frames: list[FrameResult]

    def total(self, key: str) -> int:
        return int(sum(getattr(f, key) for f in self.frames))

    @property
    def num_gt(self) -> int:
        return self.total("tp") + self.total("fn")


@dataclass
class MotSummary:
    mota: float
    idf1: float
    idsw: int
    fp: int
    fn: int
    tp: int
    num_gt: int
    idtp: int
    idfp: int
    idfn: int

    def as_row(self) -> list:
        return [getattr(self, c) for c in SUMMARY_COLUMNS]


def _tlwh_corners(rows: np.ndarray) -> np.ndarray:
    return np.stack([rows[:, 2], rows[:, 3], rows[:, 2] + rows[:, 4], rows[:, 3] + rows[:, 5]], axis=1)


def _by_frame(arr: np.ndarray) -> dict[int, np.ndarray]:
    arr = np.asarray(arr, dtype=np.float64)
    arr = arr.reshape(-1, arr.shape[-1] if arr.ndim == 2 else 6)
    frames = arr[:, 0].astype(int)
    return {int(f): arr[frames == f] for f in np.unique(frames)}


def _optimal_pairs(iou: np.ndarray, allowed: np.ndarray) -> list[tuple[int, int]]:
    """Min-distance (1 - IoU) matching over allowed pairs; unmatched costs 1 per side."""
    n, m = iou.shape
    if n == 0 or m == 0 or not allowed.any():
        return []
    cost = np.full((n + m, n + m), np.inf)
    cost[:n, :m] = np.where(allowed, 1.0 - iou, np.inf)
    cost[np.arange(n), m + np.arange(n)] = 1.0
    cost[n + np.arange(m), np.arange(m)] = 1.0
    cost[n:, m:] = 0.0
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if r < n and c < m and allowed[r, c]]


def match_frames(gt, results, iou_threshold: float = IOU_THRESHOLD) -> FrameMatching:
    """CLEAR matching: keep still-valid previous correspondences, then assign the rest optimally."""
    g_frames, r_frames = _by_frame(gt), _by_frame(results)
    last_match: dict[int, int] = {}
    out = []
    for frame in sorted(set(g_frames) | set(r_frames)):
        g = g_frames.get(frame, np.zeros((0, 6)))
        r = r_frames.get(frame, np.zeros((0, 6)))
        gid, rid = g[:, 1].astype(int), r[:, 1].astype(int)
        iou = iou_matrix(_tlwh_corners(g), _tlwh_corners(r)) if len(g) and len(r) else np.zeros((len(g), len(r)))
        allowed = iou >= iou_threshold
        pairs = []
        for i, o in enumerate(gid):
            h = last_match.get(int(o))
            if h is None:
                continue
            js = np.nonzero((rid == h) & allowed[i])[0]
            if len(js):
                pairs.append((i, int(js[0])))
        taken_g = {i for i, _ in pairs}
        taken_r = {j for _, j in pairs}
        free_g = [i for i in range(len(g)) if i not in taken_g]
        free_r = [j for j in range(len(r)) if j not in taken_r]
        sub = _optimal_pairs(iou[np.ix_(free_g, free_r)], allowed[np.ix_(free_g, free_r)])
        pairs += [(free_g[a], free_r[b]) for a, b in sub]
        idsw = 0
        id_pairs = []
        for i, j in sorted(pairs):
            o, h = int(gid[i]), int(rid[j])
            if o in last_match and last_match[o] != h:
                idsw += 1
            last_match[o] = h
            id_pairs.append((o, h))
        tp = len(pairs)
        out.append(FrameResult(frame, tp, len(r) - tp, len(g) - tp, idsw, id_pairs))
    return FrameMatching(out)


def mota(matching: FrameMatching) -> float:
    num_gt = matching.num_gt
    if num_gt == 0:
        raise UndefinedMetricError("MOTA is undefined without ground-truth boxes")
    return mota_from_counts(num_gt, matching.total("fn"), matching.total("fp"), matching.total("idsw"))


def mota_from_counts(num_gt: int, fn: int, fp: int, idsw: int) -> float:
    if num_gt == 0:
        raise UndefinedMetricError("MOTA is undefined without ground-truth boxes")
    # one rounding on an integer ratio: 1 - 32/100 would give 0.6799999999999999
    return (num_gt - fn - fp - idsw) / num_gt


def overlap_counts(gt, results, iou_threshold: float = IOU_THRESHOLD):
    """Frames in which each (gt id, track id) pair overlaps; returns ``(counts, gt_ids, track_ids, n_gt, n_res)``."""
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, np.shape(gt)[-1] if np.ndim(gt) == 2 else 6)
    results = np.asarray(results, dtype=np.float64)
    results = results.reshape(-1, results.shape[-1] if results.ndim == 2 else 6)
    gt_ids = np.unique(gt[:, 1]).astype(int)
    tr_ids = np.unique(results[:, 1]).astype(int)
    gi = {int(v): k for k, v in enumerate(gt_ids)}
    ti = {int(v): k for k, v in enumerate(tr_ids)}
    counts = np.zeros((len(gt_ids), len(tr_ids)), dtype=np.int64)
    g_frames, r_frames = _by_frame(gt), _by_frame(results)
    for frame in set(g_frames) & set(r_frames):
        g, r = g_frames[frame], r_frames[frame]
        hit = iou_matrix(_tlwh_corners(g), _tlwh_corners(r)) >= iou_threshold
        for a, b in zip(*np.nonzero(hit)):
            counts[gi[int(g[a, 1])], ti[int(r[b, 1])]] += 1
    return counts, gt_ids, tr_ids, len(gt), len(results)


def identity_counts(gt, results, iou_threshold: float = IOU_THRESHOLD) -> tuple[int, int, int]:
    """``(IDTP, IDFP, IDFN)`` under the best one-to-one identity mapping."""
    counts, _, _, n_gt, n_res = overlap_counts(gt, results, iou_threshold)
    idtp = 0
    if counts.size:
        r, c = linear_sum_assignment(counts, maximize=True)
        idtp = int(counts[r, c].sum())
    return idtp, n_res - idtp, n_gt - idtp


def idf1(gt, results, iou_threshold: float = IOU_THRESHOLD) -> float:
    idtp, idfp, idfn = identity_counts(gt, results, iou_threshold)
    denom = 2 * idtp + idfp + idfn
    if denom == 0:
        raise UndefinedMetricError("IDF1 is undefined when both ground truth and results are empty")
    return 2 * idtp / denom


def summarize(gt, results, iou_threshold: float = IOU_THRESHOLD) -> MotSummary:
    m = match_frames(gt, results, iou_threshold)
    idtp, idfp, idfn = identity_counts(gt, results, iou_threshold)
    return MotSummary(
        mota=mota(m), idf1=idf1(gt, results, iou_threshold), idsw=m.total("idsw"),
        fp=m.total("fp"), fn=m.total("fn"), tp=m.total("tp"), num_gt=m.num_gt,
        idtp=idtp, idfp=idfp, idfn=idfn,
    )


def _cell(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def format_csv(summaries: dict[str, MotSummary]) -> str:
    lines = [",".join(("name",) + SUMMARY_COLUMNS)]
    for name, s in summaries.items():
        lines.append(",".join([name] + [repr(v) if isinstance(v, float) else str(v) for v in s.as_row()]))
    return "\n".join(lines) + "\n"


def format_table(summaries: dict[str, MotSummary]) -> str:
    header = ("name",) + SUMMARY_COLUMNS
    rows = [[name] + [_cell(v) for v in s.as_row()] for name, s in summaries.items()]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = lambda cells: "  ".join(str(c).rjust(w) if k else str(c).ljust(w)  # noqa: E731
                                  for k, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]) + "\n"
