"""Kalman + DeformMamba + MotionGate prediction for a batch of tracks.

All learned computation happens in the track-local frame anchored at the
newest window state; results are mapped back to pixels for the tracker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import motion_frame as mf
from .deform_mamba import DeformMamba
from .motion_gate import FusedPrediction, MotionGate, fuse
from .tensor import checkpoint
from .tensor.core import Tensor
from .tensor.nn import ParamStore

FUSION_MODES = ("gate", "kalman", "average", "mamba")


@dataclass
class LocalBatch:
    windows: np.ndarray    # (B, T, 8)
    x_kal: np.ndarray      # (B, 8)
    sigma_kal: np.ndarray  # (B, 8)
    offset: np.ndarray     # (B, 8)
    scale: np.ndarray      # (B, 8)
    target: np.ndarray | None = None


def localize(windows, x_kal, sigma_kal, target=None) -> LocalBatch:
    windows = np.asarray(windows, dtype=np.float64)
    offset, scale = mf.frame_params(windows[:, -1])
    return LocalBatch(
        windows=mf.to_local(windows, offset[:, None, :], scale[:, None, :]),
        x_kal=mf.to_local(np.asarray(x_kal, dtype=np.float64), offset, scale),
        sigma_kal=mf.sigma_to_local(np.asarray(sigma_kal, dtype=np.float64), scale),
        offset=offset,
        scale=scale,
        target=None if target is None else mf.to_local(np.asarray(target, dtype=np.float64), offset, scale),
    )


class MotionPredictor:
    """Bundles the two learnable modules and their shared parameter store."""

    def __init__(self, seed: int = 0, num_keyframes: int = 4) -> None:
        self.params = ParamStore()
        self.model = DeformMamba(seed=seed, num_keyframes=num_keyframes,
                                 store=_Prefixed(self.params, DeformMamba.prefix))
        self.gate = MotionGate(seed=seed + 1, store=_Prefixed(self.params, MotionGate.prefix))

    # -------------------------------------------------------------- forward
    def forward_local(self, batch: LocalBatch, mode: str = "gate"):
        """Differentiable forward; returns ``(x_fuse, sigma_fuse, alpha, x_mam, sigma_mam)`` tensors."""
        if mode not in FUSION_MODES:
            raise ValueError(f"fusion mode must be one of {FUSION_MODES}, got {mode!r}")
        x_mam = self.model(Tensor(batch.windows))
        xk, sk = Tensor(batch.x_kal), Tensor(batch.sigma_kal)
        alpha, sigma_mam = self.gate(xk, sk, x_mam)
        if mode == "average":
            alpha = Tensor(np.full(alpha.shape, 0.5))
        elif mode == "mamba":
            alpha = Tensor(np.zeros(alpha.shape))
        elif mode == "kalman":
            alpha = Tensor(np.ones(alpha.shape))
        x_fuse, sigma_fuse = fuse(xk, sk, x_mam, alpha, sigma_mam)
        return x_fuse, sigma_fuse, alpha, x_mam, sigma_mam

    def predict(self, windows, x_kal, sigma_kal, mode: str = "gate") -> FusedPrediction:
        """Pixel-space fused predictions for (B, T, 8) windows; no gradient recording."""
        x_kal = np.asarray(x_kal, dtype=np.float64)
        sigma_kal = np.asarray(sigma_kal, dtype=np.float64)
        if mode == "kalman":
            return FusedPrediction(x_kal.copy(), sigma_kal.copy(), np.ones_like(x_kal))
        batch = localize(windows, x_kal, sigma_kal)
        _, _, alpha, x_mam, sigma_mam = self.forward_local(batch, mode)
        # Blend in pixels (the local map is affine, so this equals mapping the local
        # blend back) so that a saturated gate, alpha == 1, returns x_kal bit for bit.
        x, s = fuse(x_kal, sigma_kal, mf.from_local(x_mam.data, batch.offset, batch.scale),
                    alpha, mf.sigma_from_local(sigma_mam.data, batch.scale))
        return FusedPrediction(x.data, s.data, alpha.data.copy())

    # ------------------------------------------------------------ persistence
    def state_arrays(self) -> dict[str, np.ndarray]:
        return dict(self.params.state_dict())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.params.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("optim.")})

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        arrays = self.state_arrays()
        if extra:
            arrays.update(extra)
        checkpoint.save(path, arrays)

    @classmethod
    def from_checkpoint(cls, path, num_keyframes: int = 4) -> "MotionPredictor":
        arrays = checkpoint.load(path)
        pred = cls(seed=0, num_keyframes=num_keyframes)
        pred.load_arrays(arrays)
        return pred


class _Prefixed(ParamStore):
    """View onto a shared store that prepends a fixed prefix to new names."""

    def __init__(self, base: ParamStore, prefix: str) -> None:
        self.prefix = prefix
        self._params = base._params
