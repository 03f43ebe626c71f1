"""AdamW with decoupled weight decay and bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError
from .core import Tensor


@dataclass
class AdamWState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamWState,
               lr: float | None = None) -> None:
    """Apply one AdamW update in place.

    ``lr`` overrides ``state.lr`` for this step only (used by warm-up).
    Raises :class:`NumericalError` and leaves everything untouched if any
    gradient is non-finite.
    """
    lr = state.lr if lr is None else lr
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if g.shape != params[name].data.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].data.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericalError(f"non-finite gradient in {name} ({bad} entries); step rejected")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.exp_avg[name] = m
        state.exp_avg_sq[name] = v
        if state.weight_decay:
            p.data = p.data * (1.0 - lr * state.weight_decay)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class AdamW:
    """Thin stateful wrapper binding :func:`adamw_step` to a parameter set."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0) -> None:
        self.params = {p.name: p for p in params}
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def step(self, lr: float | None = None) -> None:
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        adamw_step(self.params, grads, self.state, lr=lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flatten optimizer state into named arrays for checkpointing."""
        out = {"optim.step": np.array(float(self.state.step))}
        for k in self.params:
            if k in self.state.exp_avg:
                out[f"optim.exp_avg.{k}"] = self.state.exp_avg[k]
                out[f"optim.exp_avg_sq.{k}"] = self.state.exp_avg_sq[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if "optim.step" not in arrays:
            return
        self.state.step = int(arrays["optim.step"])
        for k in self.params:
            m = arrays.get(f"optim.exp_avg.{k}")
            if m is not None:
                self.state.exp_avg[k] = np.array(m)
                self.state.exp_avg_sq[k] = np.array(arrays[f"optim.exp_avg_sq.{k}"])


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if np.isfinite(total) and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
