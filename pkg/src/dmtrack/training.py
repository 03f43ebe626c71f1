"""Joint training of DeformMamba and MotionGate on ground-truth trajectory windows."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import mot_io
from .deform_mamba import STATE_DIM, WINDOW
from .errors import ConfigError, DataError, NumericalError
from .kalman import KalmanFilter, sigma_diag
from .predictor import MotionPredictor, localize
from .prng import derive_seed
from .tensor import checkpoint
from .tensor.core import Tape, Tensor, as_tensor, log, mean, square, tabs, tsum
from .tensor.optim import AdamW, clip_grad_norm

STATE_LOSS_TARGETS = ("fused", "mamba", "both")
LOSS_CSV_HEADER = "epoch,mean_state_loss,mean_conf_loss,mean_total"


@dataclass
class TrainingSample:
    window: np.ndarray     # (8, 8) ground-truth states, oldest first
    target: np.ndarray     # (8,) state at the frame after the window
    x_kal: np.ndarray      # (8,) Kalman prediction for the target frame
    sigma_kal: np.ndarray  # (8,)
    track_id: int = 0
    end_frame: int = 0     # frame index of the newest window entry

    @property
    def target_frame(self) -> int:
        return self.end_frame + 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 64
    epochs: int = 50
    warmup_epochs: int = 2
    lambda1: float = 1.0
    lambda2: float = 0.2
    seed: int = 0
    grad_clip: float = 5.0
    weight_decay: float = 0.01
    state_loss_target: str = "fused"

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"loss weights must be non-negative, got {self.lambda1}, {self.lambda2}")
        if self.batch < 1 or self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("batch must be >= 1 and epochs, warmup_epochs >= 0")
        if self.state_loss_target not in STATE_LOSS_TARGETS:
            raise ConfigError(f"state_loss_target must be one of {STATE_LOSS_TARGETS}, got {self.state_loss_target!r}")


@dataclass
class EpochLoss:
    epoch: int
    state: float
    conf: float
    total: float


@dataclass
class TrainResult:
    predictor: MotionPredictor
    curve: list[EpochLoss] = field(default_factory=list)
    step: int = 0
    optimizer: AdamW | None = None


class TrainingDiverged(NumericalError):
    """Raised when a loss turns non-finite; ``result`` holds the last good state."""

    def __init__(self, message: str, result: TrainResult) -> None:
        super().__init__(message)
        self.result = result


# ------------------------------------------------------------------ windows
def _runs(frames: np.ndarray) -> list[tuple[int, int]]:
    """Index ranges ``[start, stop)`` of consecutive frame numbers."""
    if len(frames) == 0:
        return []
    breaks = np.nonzero(np.diff(frames) != 1)[0] + 1
    edges = np.concatenate([[0], breaks, [len(frames)]])
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def states_from_boxes(boxes: np.ndarray) -> np.ndarray:
    """(N, 4) cxcyah boxes of consecutive frames to (N, 8) states with finite-difference velocities."""
    boxes = np.asarray(boxes, dtype=np.float64)
    vel = np.zeros_like(boxes)
    vel[1:] = np.diff(boxes, axis=0)
    return np.concatenate([boxes, vel], axis=1)


def build_windows(gts: Iterable[np.ndarray], kf: KalmanFilter | None = None,
                  stats: dict | None = None, gap_prob: float = 0.0, max_gap: int = 0,
                  seed: int = 0) -> list[TrainingSample]:
    """Sliding T=8 windows with next-frame targets from MOT ground-truth arrays.

    Each argument element is an (N, 6) ``[frame, id, left, top, w, h]``
    array (e.g. ``SyntheticSequence.gt``).  Tracks are split at frame gaps;
    runs shorter than T+1 frames are skipped and counted in ``stats``.

    With ``gap_prob > 0`` a sample is, with that probability, turned into a
    simulated miss of ``k <= max_gap`` frames: the newest ``k`` window
    entries become coasted Kalman predictions (what a tracker pushes while a
    track is unmatched) and the Kalman context is the ``k+1``-step
    prediction.  The target is unchanged.
    """
    kf = kf or KalmanFilter()
    rng = np.random.default_rng(derive_seed(seed, "train.gaps") & 0xFFFFFFFF) if gap_prob > 0 else None
    out: list[TrainingSample] = []
    skipped = 0
    for gt in gts:
        gt = np.asarray(gt, dtype=np.float64).reshape(-1, 6)
        for tid in np.unique(gt[:, 1]).astype(int):
            rows = gt[gt[:, 1] == tid]
            rows = rows[np.argsort(rows[:, 0], kind="stable")]
            frames = rows[:, 0].astype(int)
            boxes = mot_io.tlwh_to_cxcyah(rows[:, 2:6])
            for a, b in _runs(frames):
                if b - a < WINDOW + 1:
                    skipped += 1
                    continue
                states = states_from_boxes(boxes[a:b])
                posts = [kf.initiate(boxes[a])]
                for i in range(1, b - a):
                    pred = kf.predict(posts[-1])
                    if i >= WINDOW:
                        window, x_kal, sig = states[i - WINDOW:i].copy(), pred.mean.copy(), sigma_diag(pred)
                        if rng is not None and rng.uniform() < gap_prob:
                            k = int(rng.integers(1, min(max_gap, i - 1) + 1))
                            real = states[max(0, i - k - WINDOW):i - k]
                            window, x_kal, sig = _coasted(kf, posts[i - k - 1], real, k)
                        out.append(TrainingSample(
                            window=window, target=states[i].copy(), x_kal=x_kal, sigma_kal=sig,
                            track_id=int(tid), end_frame=int(frames[a + i - 1]),
                        ))
                    posts.append(kf.update(pred, boxes[a + i]))
    if stats is not None:
        stats["skipped_runs"] = stats.get("skipped_runs", 0) + skipped
        stats["samples"] = stats.get("samples", 0) + len(out)
    return out


def _coasted(kf: KalmanFilter, post, real: np.ndarray, k: int):
    """Window whose newest ``k`` entries are unmatched-track Kalman predictions."""
    state = kf.predict(post)
    pushed = [state.mean[:4]]
    for _ in range(k):
        mean = state.mean.copy()
        mean[7] = 0.0  # lost tracks keep their height
        state = kf.predict(type(state)(mean, state.covariance))
        pushed.append(state.mean[:4])
    rows = list(real)
    prev = rows[-1][:4]
    for box in pushed[:-1]:
        rows.append(np.concatenate([box, box - prev]))
        prev = box
    return np.array(rows[-WINDOW:]), state.mean.copy(), sigma_diag(state)


def stack_samples(samples: Sequence[TrainingSample]):
    if not samples:
        raise DataError("no training samples (every track shorter than 9 frames?)")
    return (np.stack([s.window for s in samples]), np.stack([s.x_kal for s in samples]),
            np.stack([s.sigma_kal for s in samples]), np.stack([s.target for s in samples]))


# ------------------------------------------------------------------- losses
def loss_state(x_pred, x_gt) -> Tensor:
    """L1 over the 8 state dims, averaged over any leading batch axes."""
    err = tsum(tabs(as_tensor(x_pred) - as_tensor(x_gt)), axis=-1)
    return mean(err) if err.ndim else err


def loss_conf(x, x_gt, sigma) -> Tensor:
    """Gaussian negative log-likelihood (without the constant), batch-averaged."""
    sigma = as_tensor(sigma)
    nll = 0.5 * square(as_tensor(x) - as_tensor(x_gt)) / square(sigma) + log(sigma)
    per = tsum(nll, axis=-1)
    return mean(per) if per.ndim else per


def loss_total(l_state, l_conf, config: TrainConfig | None = None):
    cfg = config or TrainConfig()
    return cfg.lambda1 * l_state + cfg.lambda2 * l_conf


def batch_losses(predictor: MotionPredictor, windows, x_kal, sigma_kal, target,
                 config: TrainConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Forward one batch in the local frame; returns ``(l_state, l_conf, l_total)``."""
    batch = localize(windows, x_kal, sigma_kal, target)
    x_fuse, sigma_fuse, _, x_mam, _ = predictor.forward_local(batch, "gate")
    gt = Tensor(batch.target)
    if config.state_loss_target == "fused":
        ls = loss_state(x_fuse, gt)
    elif config.state_loss_target == "mamba":
        ls = loss_state(x_mam, gt)
    else:
        ls = loss_state(x_fuse, gt) + loss_state(x_mam, gt)
    lc = loss_conf(x_fuse, gt, sigma_fuse)
    return ls, lc, loss_total(ls, lc, config)


# ----------------------------------------------------------------- schedule
def warmup_lr(step: int, lr_max: float, warmup_steps: int) -> float:
    """Learning rate for 1-based optimizer ``step``: linear ramp, then constant."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return lr_max
    return lr_max * step / warmup_steps


def steps_per_epoch(num_samples: int, batch: int) -> int:
    return max(1, math.ceil(num_samples / batch))


# -------------------------------------------------------------------- train
def model_seed(seed: int) -> int:
    return derive_seed(seed, "train.init") & 0xFFFFFFFF


def train(samples: Sequence[TrainingSample], config: TrainConfig | None = None, *,
          resume: dict[str, np.ndarray] | None = None,
          on_epoch: Callable[[EpochLoss], None] | None = None) -> TrainResult:
    """Jointly train DeformMamba and MotionGate.

    ``resume`` is a checkpoint dict written by :func:`checkpoint_arrays`; the
    epoch counter and optimizer step continue from it.
    """
    cfg = config or TrainConfig()
    cfg.validate()
    windows, x_kal, sigma_kal, target = stack_samples(samples)
    n = len(windows)
    predictor = MotionPredictor(seed=model_seed(cfg.seed))
    params = list(predictor.params)
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    start_epoch = 0
    if resume is not None:
        predictor.load_arrays(resume)
        opt.load_state_arrays(resume)
        start_epoch = int(resume.get("train.epoch", np.array(0.0)))
    result = TrainResult(predictor, [], opt.state.step, opt)
    spe = steps_per_epoch(n, cfg.batch)
    warmup_steps = cfg.warmup_epochs * spe
    shuffle_root = derive_seed(cfg.seed, "train.shuffle")

    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng([shuffle_root & 0xFFFFFFFF, shuffle_root >> 32, epoch]).permutation(n)
        sums = np.zeros(3)
        for b in range(spe):
            idx = order[b * cfg.batch:(b + 1) * cfg.batch]
            snapshot = predictor.params.state_dict()
            try:
                with Tape() as tape:
                    ls, lc, lt = batch_losses(predictor, windows[idx], x_kal[idx], sigma_kal[idx], target[idx], cfg)
                    if not np.isfinite(lt.data):
                        raise NumericalError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
                    opt.zero_grad()
                    tape.backward(lt)
                clip_grad_norm(params, cfg.grad_clip)
                opt.step(lr=warmup_lr(opt.state.step + 1, cfg.lr, warmup_steps))
            except NumericalError as exc:
                predictor.params.load_state_dict(snapshot)
                result.step = opt.state.step
                raise TrainingDiverged(str(exc), result) from exc
            sums += (ls.item(), lc.item(), lt.item())
        rec = EpochLoss(epoch + 1, *(float(v) for v in sums / spe))
        result.curve.append(rec)
        result.step = opt.state.step
        if on_epoch is not None:
            on_epoch(rec)
    return result


def fit_fixed_batch(samples: Sequence[TrainingSample], steps: int, config: TrainConfig | None = None,
                    seed: int = 0) -> np.ndarray:
    """Repeated AdamW steps on one fixed batch at constant lr (overfit diagnostic).

    Returns the ``(steps, 3)`` array of ``(state, conf, total)`` losses, each
    measured before the step it precedes.
    """
    cfg = config or TrainConfig()
    cfg.validate()
    windows, x_kal, sigma_kal, target = stack_samples(samples)
    predictor = MotionPredictor(seed=model_seed(seed))
    params = list(predictor.params)
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    out = np.zeros((steps, 3))
    for k in range(steps):
        with Tape() as tape:
            ls, lc, lt = batch_losses(predictor, windows, x_kal, sigma_kal, target, cfg)
            opt.zero_grad()
            tape.backward(lt)
        clip_grad_norm(params, cfg.grad_clip)
        opt.step(lr=cfg.lr)
        out[k] = ls.item(), lc.item(), lt.item()
    return out


def checkpoint_arrays(result: TrainResult, epoch: int | None = None) -> dict[str, np.ndarray]:
    arrays = result.predictor.state_arrays()
    if result.optimizer is not None:
        arrays.update(result.optimizer.state_arrays())
    if epoch is None:
        epoch = result.curve[-1].epoch if result.curve else 0
    arrays["train.epoch"] = np.array(float(epoch))
    return arrays


def save_checkpoint(path, result: TrainResult, epoch: int | None = None) -> None:
    checkpoint.save(path, checkpoint_arrays(result, epoch))


def format_loss_csv(curve: Sequence[EpochLoss]) -> str:
    lines = [LOSS_CSV_HEADER] + [f"{r.epoch},{r.state!r},{r.conf!r},{r.total!r}" for r in curve]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------- evaluation
def evaluate_prediction(predictor: MotionPredictor | None, samples: Sequence[TrainingSample],
                        mode: str = "gate", chunk: int = 512) -> dict[str, float]:
    """Single-step centre errors (px) of the fused model and of Kalman alone.

    With a one-step horizon ADE and FDE coincide; both keys are reported.
    """
    windows, x_kal, sigma_kal, target = stack_samples(samples)
    kal_err = np.hypot(*(x_kal[:, :2] - target[:, :2]).T)
    out = {"kalman_ade": float(kal_err.mean()), "kalman_fde": float(kal_err.mean()), "samples": float(len(samples))}
    if predictor is not None:
        preds = []
        for i in range(0, len(windows), chunk):
            sl = slice(i, i + chunk)
            preds.append(predictor.predict(windows[sl], x_kal[sl], sigma_kal[sl], mode).x_fuse)
        x = np.concatenate(preds)
        err = np.hypot(*(x[:, :2] - target[:, :2]).T)
        out.update(ade=float(err.mean()), fde=float(err.mean()))
    return out


__all__ = [
    "EpochLoss", "LOSS_CSV_HEADER", "TrainConfig", "TrainResult", "TrainingDiverged", "TrainingSample",
    "batch_losses", "build_windows", "checkpoint_arrays", "evaluate_prediction", "fit_fixed_batch", "format_loss_csv",
    "loss_conf", "loss_state", "loss_total", "save_checkpoint", "states_from_boxes", "stack_samples",
    "steps_per_epoch", "train", "warmup_lr",
]
