"""Finite-difference verification of the analytic gradients of every learnable piece.

Each trial draws fresh parameters and inputs, back-propagates a scalar
objective once, then compares selected gradient entries against central
differences ``(f(p + h) - f(p - h)) / 2h`` in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .deform_mamba import STATE_DIM, WINDOW, DeformMamba
from .motion_gate import MotionGate
from .predictor import MotionPredictor
from .tensor.core import Tape, Tensor, tsum
from .training import TrainConfig, batch_losses, loss_conf, loss_state

STEP = 1e-5
TOLERANCE = 1e-4
# Gradients smaller than this are compared on an absolute scale.  Central
# differences with h=1e-5 carry ~1e-10 rounding noise on these objectives
# (the error on tiny entries grows as 1/h), so a 1e-4 relative bound is only
# meaningful for entries above ~1e-5.
REL_FLOOR = 1e-5
MODULES = ("deform_mamba", "motion_gate", "loss_state", "loss_conf", "joint")


@dataclass
class ModuleReport:
    module: str
    max_rel_error: float
    worst: str
    checks: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _analytic(objective: Callable[[], Tensor], leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for t in leaves.values():
        t.zero_grad()
    with Tape() as tape:
        loss = objective()
        tape.backward(loss)
    return {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}


def _numeric(objective: Callable[[], Tensor], leaf: Tensor, index: tuple, h: float) -> float:
    orig = leaf.data[index]
    leaf.data[index] = orig + h
    fp = objective().item()
    leaf.data[index] = orig - h
    fm = objective().item()
    leaf.data[index] = orig
    return (fp - fm) / (2 * h)


def _check(objective, leaves: dict[str, Tensor], rng: np.random.Generator, coords: int, h: float,
           corrupt: bool, every_leaf: bool = False) -> tuple[float, str, int]:
    grads = _analytic(objective, leaves)
    if corrupt:
        grads = {k: g * 1.01 + 1e-3 for k, g in grads.items()}
    names = list(leaves)
    picks = [(n, None) for n in names] if every_leaf else [(names[rng.integers(len(names))], None) for _ in range(coords)]
    worst, where = 0.0, ""
    for name, _ in picks:
        leaf = leaves[name]
        index = tuple(int(rng.integers(s)) for s in leaf.shape)
        num = _numeric(objective, leaf, index, h)
        err = relative_error(float(grads[name][index]), num)
        if err > worst or not where:
            worst, where = err, f"{name}{list(index)}"
    return worst, where, len(picks)


def _windows(rng: np.random.Generator, batch: int) -> np.ndarray:
    return rng.normal(size=(batch, WINDOW, STATE_DIM))


def _trial_deform_mamba(rng, coords, h, corrupt):
    model = DeformMamba(seed=int(rng.integers(2**31)))
    x = Tensor(_windows(rng, 2), requires_grad=True, name="input")
    proj = rng.normal(size=(2, STATE_DIM))
    leaves = dict(model.params.items())
    leaves["input"] = x
    return _check(lambda: tsum(model(x) * proj), leaves, rng, coords, h, corrupt)


def _trial_motion_gate(rng, coords, h, corrupt):
    gate = MotionGate(seed=int(rng.integers(2**31)))
    xk = Tensor(rng.normal(size=(3, STATE_DIM)), requires_grad=True, name="x_kal")
    sk = Tensor(rng.uniform(0.1, 2.0, size=(3, STATE_DIM)), requires_grad=True, name="sigma_kal")
    xm = Tensor(rng.normal(size=(3, STATE_DIM)), requires_grad=True, name="x_mam")
    p1, p2 = rng.normal(size=(3, STATE_DIM)), rng.normal(size=(3, STATE_DIM))

    def objective():
        alpha, sigma_mam = gate(xk, sk, xm)
        return tsum(alpha * p1) + tsum(sigma_mam * p2)

    leaves = dict(gate.params.items())
    leaves.update(x_kal=xk, sigma_kal=sk, x_mam=xm)
    return _check(objective, leaves, rng, coords, h, corrupt)


def _trial_loss_state(rng, coords, h, corrupt):
    gt = rng.normal(size=(4, STATE_DIM))
    # keep every residual away from the kink of |.|
    diff = rng.uniform(0.05, 1.0, size=gt.shape) * rng.choice([-1.0, 1.0], size=gt.shape)
    x = Tensor(gt + diff, requires_grad=True, name="x_pred")
    return _check(lambda: loss_state(x, gt), {"x_pred": x}, rng, coords, h, corrupt)


def _trial_loss_conf(rng, coords, h, corrupt):
    gt = rng.normal(size=(4, STATE_DIM))
    x = Tensor(rng.normal(size=(4, STATE_DIM)), requires_grad=True, name="x")
    s = Tensor(rng.uniform(0.2, 2.0, size=(4, STATE_DIM)), requires_grad=True, name="sigma")
    return _check(lambda: loss_conf(x, gt, s), {"x": x, "sigma": s}, rng, coords, h, corrupt)


def _trial_joint(rng, coords, h, corrupt, every_leaf=False):
    pred = MotionPredictor(seed=int(rng.integers(2**31)))
    batch = 3
    base = np.array([400.0, 300.0, 1.2, 30.0, 3.0, -2.0, 0.0, 0.1])
    steps = np.arange(WINDOW)[:, None] * base[None, 4:]
    windows = np.tile(base, (batch, WINDOW, 1))
    windows[:, :, :4] += steps[None] + rng.normal(scale=0.5, size=(batch, WINDOW, 4))
    x_kal = windows[:, -1] + rng.normal(scale=1.0, size=(batch, STATE_DIM))
    x_kal[:, 2:4] = np.abs(x_kal[:, 2:4])
    sigma_kal = rng.uniform(0.5, 3.0, size=(batch, STATE_DIM))
    target = windows[:, -1] + rng.normal(scale=2.0, size=(batch, STATE_DIM))
    cfg = TrainConfig()
    leaves = dict(pred.params.items())
    return _check(lambda: batch_losses(pred, windows, x_kal, sigma_kal, target, cfg)[2],
                  leaves, rng, coords, h, corrupt, every_leaf)


_TRIALS = {
    "deform_mamba": _trial_deform_mamba,
    "motion_gate": _trial_motion_gate,
    "loss_state": _trial_loss_state,
    "loss_conf": _trial_loss_conf,
    "joint": _trial_joint,
}


def run_gradcheck(trials: int = 100, seed: int = 0, coords: int = 4, h: float = STEP,
                  tolerance: float = TOLERANCE, modules=MODULES, corrupt: str | None = None) -> list[ModuleReport]:
    """Check ``coords`` random gradient entries per module per trial.

    ``corrupt`` names a module whose analytic gradients are deliberately
    perturbed before comparison (negative control for the checker itself).
    """
    reports = []
    for name in modules:
        rng = np.random.default_rng([seed, MODULES.index(name)])
        worst, where, n = 0.0, "", 0
        for _ in range(trials):
            err, loc, k = _TRIALS[name](rng, coords, h, corrupt == name)
            n += k
            if err > worst or not where:
                worst, where = err, loc
        reports.append(ModuleReport(name, worst, where, n, tolerance))
    return reports


def check_every_parameter(seed: int = 0, h: float = STEP, tolerance: float = TOLERANCE) -> ModuleReport:
    """One random entry of every parameter tensor, through the full training loss."""
    rng = np.random.default_rng([seed, 99])
    err, loc, n = _trial_joint(rng, 0, h, False, every_leaf=True)
    return ModuleReport("joint/all-parameters", err, loc, n, tolerance)


def format_report(reports: list[ModuleReport]) -> str:
    lines = [f"{'module':<22} {'checks':>6} {'max_rel_error':>14}  status  worst_entry"]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.module:<22} {r.checks:>6} {r.max_rel_error:>14.3e}  {status:<6}  {r.worst}")
    return "\n".join(lines) + "\n"
