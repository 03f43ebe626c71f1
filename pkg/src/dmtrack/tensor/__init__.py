"""Minimal float64 tensor engine with reverse-mode autodiff and AdamW."""

from .core import (
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    concat,
    div,
    elementwise,
    exp,
    gather_rows,
    gelu,
    getitem,
    layernorm,
    log,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    silu,
    softplus,
    square,
    stack,
    sub,
    tabs,
    tsum,
)
from .nn import Linear, ParamStore
from .optim import AdamW, AdamWState, adamw_step, clip_grad_norm


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every parameter that contributed to ``loss``."""
    loss.backward()


__all__ = [
    "AdamW", "AdamWState", "Linear", "ParamStore", "Tape", "Tensor", "active_tape",
    "adamw_step", "add", "as_tensor", "backward", "clip_grad_norm", "concat", "div",
    "elementwise", "exp", "gather_rows", "gelu", "getitem", "layernorm", "log", "matmul",
    "mean", "mul", "neg", "relu", "reshape", "sigmoid", "silu", "softplus", "square",
    "stack", "sub", "tabs", "tsum",
]
