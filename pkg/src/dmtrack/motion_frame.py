"""Track-local coordinates for the learned predictors.

Raw states are in pixels (hundreds) while the networks work best on O(1)
inputs.  Every learned computation therefore runs in a frame anchored at
the newest real state of the track's window: positions and height are
expressed relative to the anchor and divided by the anchor height, the
aspect ratio relative to the anchor aspect ratio.  The map is affine per
dimension with a positive scale, so convex blends commute with it.
"""

from __future__ import annotations

import numpy as np


def frame_params(anchor: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and scales (each (..., 8)) for anchors of shape (..., 8) or (..., 4)."""
    anchor = np.asarray(anchor, dtype=np.float64)
    h = anchor[..., 3]
    offset = np.zeros(anchor.shape[:-1] + (8,))
    offset[..., :4] = anchor[..., :4]
    scale = np.repeat(h[..., None], 8, axis=-1)
    scale[..., 2] = 1.0
    scale[..., 6] = 1.0
    return offset, scale


def to_local(states: np.ndarray, offset: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Map pixel states (..., 8) into the local frame; offset/scale broadcast over middle axes."""
    return (states - offset) / scale


def from_local(states: np.ndarray, offset: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return states * scale + offset


def sigma_to_local(sigma: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return sigma / scale


def sigma_from_local(sigma: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return sigma * scale
