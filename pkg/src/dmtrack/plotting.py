"""Figures written next to the delimited CLI outputs (matplotlib, file backend only)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402


def _save(fig, path) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        # fixed metadata keeps the bytes reproducible
        fig.savefig(p, dpi=100, metadata={"Software": None})
    except OSError as exc:
        raise DataError(f"cannot write {p}: {exc.strerror or exc}") from None
    finally:
        plt.close(fig)
    return p


def plot_loss_curve(curve: Sequence, path) -> Path:
    """Per-epoch state, confidence and total loss."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r.epoch for r in curve]
    ax.plot(epochs, [r.state for r in curve], marker="o", label="state (L1)")
    ax.plot(epochs, [r.conf for r in curve], marker="s", label="confidence (NLL)")
    ax.plot(epochs, [r.total for r in curve], marker="^", label="total")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_trajectories(rows: np.ndarray, path, gt: np.ndarray | None = None, max_tracks: int = 40) -> Path:
    """Centre paths of tracker output (solid) over ground truth (dashed grey).

    ``rows`` and ``gt`` are MOT arrays ``[frame, id, left, top, w, h, ...]``.
    """
    fig, ax = plt.subplots(figsize=(8, 5))
    if gt is not None and len(gt):
        for tid in np.unique(gt[:, 1]):
            g = gt[gt[:, 1] == tid]
            ax.plot(g[:, 2] + g[:, 4] / 2, g[:, 3] + g[:, 5] / 2, "--", color="0.6", lw=0.8)
    if len(rows):
        for tid in np.unique(rows[:, 1])[:max_tracks]:
            r = rows[rows[:, 1] == tid]
            ax.plot(r[:, 2] + r[:, 4] / 2, r[:, 3] + r[:, 5] / 2, lw=1.2)
    ax.invert_yaxis()
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (px)")
    ax.set_ylabel("y (px)")
    ax.set_title("tracks (solid) vs ground truth (dashed)")
    fig.tight_layout()
    return _save(fig, path)
