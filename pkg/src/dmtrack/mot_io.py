"""Reading and writing MOT Challenge style text files.

Row layouts:

* ground truth: ``frame,id,bb_left,bb_top,bb_width,bb_height,1,1,1.0``
* detections:   ``frame,-1,bb_left,bb_top,bb_width,bb_height,conf,-1,-1,-1``
* results:      ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,-1,-1,-1``
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError


def _fmt(v: float) -> str:
    return repr(float(v))


def _read_rows(path, min_cols: int) -> list[tuple[int, list[str]]]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {p}: {exc.strerror or exc}") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        cols = [c.strip() for c in line.split(",")]
        if len(cols) < min_cols:
            raise DataError(f"{p}:{lineno}: expected at least {min_cols} comma-separated fields, got {len(cols)}")
        rows.append((lineno, cols))
    return rows


def _parse(path, min_cols: int, int_cols: tuple[int, ...], float_cols: tuple[int, ...]) -> np.ndarray:
    out = []
    for lineno, cols in _read_rows(path, min_cols):
        try:
            row = [float(int(float(cols[i]))) for i in int_cols] + [float(cols[i]) for i in float_cols]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric field in {','.join(cols)!r}") from None
        if not all(np.isfinite(row)):
            raise DataError(f"{path}:{lineno}: non-finite value")
        if row[0] < 1:
            raise DataError(f"{path}:{lineno}: frame numbers start at 1, got {int(row[0])}")
        out.append(row)
    return np.array(out, dtype=np.float64).reshape(-1, len(int_cols) + len(float_cols))


def read_gt(path) -> np.ndarray:
    """(N, 6) array ``[frame, id, left, top, width, height]``."""
    return _parse(path, 6, (0, 1), (2, 3, 4, 5))


def read_detections(path) -> np.ndarray:
    """(N, 6) array ``[frame, left, top, width, height, conf]``."""
    return _parse(path, 7, (0,), (2, 3, 4, 5, 6))


def read_results(path) -> np.ndarray:
    """(N, 7) array ``[frame, id, left, top, width, height, conf]``."""
    return _parse(path, 7, (0, 1), (2, 3, 4, 5, 6))


def format_gt(gt: np.ndarray) -> str:
    lines = [f"{int(r[0])},{int(r[1])},{_fmt(r[2])},{_fmt(r[3])},{_fmt(r[4])},{_fmt(r[5])},1,1,1.0" for r in gt]
    return "".join(line + "\n" for line in lines)


def format_detections(dets: np.ndarray) -> str:
    lines = [f"{int(r[0])},-1,{_fmt(r[1])},{_fmt(r[2])},{_fmt(r[3])},{_fmt(r[4])},{_fmt(r[5])},-1,-1,-1" for r in dets]
    return "".join(line + "\n" for line in lines)


def format_results(rows) -> str:
    """Rows ``(frame, id, left, top, width, height, conf)`` with 2-decimal boxes."""
    lines = [
        f"{int(f)},{int(i)},{l:.2f},{t:.2f},{w:.2f},{h:.2f},{c:.2f},-1,-1,-1"
        for f, i, l, t, w, h, c in rows
    ]
    return "".join(line + "\n" for line in lines)


def write_text(path, text: str) -> None:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {p}: {exc.strerror or exc}") from None


def tlwh_to_cxcyah(tlwh) -> np.ndarray:
    b = np.asarray(tlwh, dtype=np.float64)
    return np.stack([b[..., 0] + b[..., 2] / 2, b[..., 1] + b[..., 3] / 2, b[..., 2] / b[..., 3], b[..., 3]], axis=-1)


def cxcyah_to_tlwh(box) -> np.ndarray:
    b = np.asarray(box, dtype=np.float64)
    w = b[..., 2] * b[..., 3]
    return np.stack([b[..., 0] - w / 2, b[..., 1] - b[..., 3] / 2, w, b[..., 3]], axis=-1)
