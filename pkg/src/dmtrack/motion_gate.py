"""MotionGate: per-dimension confidence-gated blending of Kalman and learned predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .tensor.core import Tensor, as_tensor, concat, gelu, sigmoid, softplus
from .tensor.nn import Linear, ParamStore

STATE_DIM = 8
HIDDEN = 64
SIGMA_EPS = 1e-6


@dataclass
class FusedPrediction:
    x_fuse: np.ndarray
    sigma_fuse: np.ndarray
    alpha: np.ndarray


class MotionGate:
    """Gate network ``[x_kal | sigma_kal | x_mam] -> (alpha, sigma_mam)``."""

    prefix = "motion_gate."

    def __init__(self, seed: int = 0, store: ParamStore | None = None) -> None:
        rng = np.random.default_rng(seed)
        self.params = store if store is not None else ParamStore(self.prefix)
        self.shared = Linear(self.params, "shared", 3 * STATE_DIM, HIDDEN, rng)
        self.alpha_head = Linear(self.params, "alpha", HIDDEN, STATE_DIM, rng)
        self.sigma_head = Linear(self.params, "sigma", HIDDEN, STATE_DIM, rng)

    def __call__(self, x_kal, sigma_kal, x_mam) -> tuple[Tensor, Tensor]:
        return gate_forward(x_kal, sigma_kal, x_mam, self)


def gate_forward(x_kal, sigma_kal, x_mam, gate: MotionGate) -> tuple[Tensor, Tensor]:
    """Return ``(alpha, sigma_mam)``, each (..., 8)."""
    x_kal, sigma_kal, x_mam = as_tensor(x_kal), as_tensor(sigma_kal), as_tensor(x_mam)
    for label, t in (("x_kal", x_kal), ("sigma_kal", sigma_kal), ("x_mam", x_mam)):
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"motion gate received non-finite {label}")
    if np.any(sigma_kal.data < 0):
        raise ValueError("sigma_kal must be non-negative")
    h = gelu(gate.shared(concat([x_kal, sigma_kal, x_mam], axis=-1)))
    alpha = sigmoid(gate.alpha_head(h))
    sigma_mam = softplus(gate.sigma_head(h)) + SIGMA_EPS
    return alpha, sigma_mam


def fuse(x_kal, sigma_kal, x_mam, alpha, sigma_mam) -> tuple[Tensor, Tensor]:
    """Convex per-dimension blends of state and uncertainty (differentiable)."""
    alpha = as_tensor(alpha)
    beta = 1.0 - alpha
    return alpha * x_kal + beta * x_mam, alpha * sigma_kal + beta * sigma_mam


def fuse_prediction(x_kal, sigma_kal, x_mam, alpha, sigma_mam) -> FusedPrediction:
    """Array-level :func:`fuse` returning a :class:`FusedPrediction`."""
    x, s = fuse(x_kal, sigma_kal, x_mam, alpha, sigma_mam)
    return FusedPrediction(x.data, s.data, np.asarray(as_tensor(alpha).data))
