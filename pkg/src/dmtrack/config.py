"""Flat ``key = value`` run configuration shared by every CLI subcommand.

Precedence is command-line flag, then config file, then the built-in
default.  Unknown keys are rejected with the key named.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .tracker import TrackerConfig
from .training import TrainConfig


def _key(default, help: str, group: str):
    return field(default=default, metadata={"help": help, "group": group})


@dataclass
class RunConfig:
    # scenario
    preset: str = _key("uav-mix", "synthetic preset: linear, turns, occlusion, crowd, uav-mix", "scenario")
    seed: int = _key(0, "root seed; every subsystem derives its own stream from it", "scenario")
    num_frames: int = _key(200, "frames per synthetic sequence", "scenario")
    num_sequences: int = _key(1, "sequences generated by synth", "scenario")
    sigma_det: float = _key(1.0, "detection centre noise std (px)", "scenario")
    p_miss: float = _key(0.05, "per-box miss probability", "scenario")
    fp_rate: float = _key(1.0, "mean false positives per frame", "scenario")
    # model
    window: int = _key(8, "trajectory window length T (fixed)", "model")
    num_keyframes: int = _key(4, "deformable keyframes K", "model")
    # tracker
    tau_high: float = _key(0.6, "high-confidence threshold", "tracker")
    tau_low: float = _key(0.1, "low-confidence threshold; lower scores are ignored", "tracker")
    iou_gate: float = _key(0.3, "minimum IoU for a candidate match", "tracker")
    n_init: int = _key(3, "consecutive matches to confirm a track", "tracker")
    max_age: int = _key(30, "frames a confirmed track survives unmatched", "tracker")
    w1: float = _key(0.7, "match score weight of IoU", "tracker")
    w2: float = _key(0.2, "match score weight of trend similarity", "tracker")
    w3: float = _key(0.1, "match score weight of the uncertainty penalty", "tracker")
    trend_sign: str = _key("as_printed", "trend offset direction: as_printed (pred - det) or reversed", "tracker")
    fusion: str = _key("gate", "prediction fusion: gate, kalman, average (alpha=0.5), mamba (alpha=0)", "tracker")
    association: str = _key("full", "stage-1 score: full or iou", "tracker")
    lost_history: str = _key("fused", "state pushed into an unmatched track's window: fused or kalman", "tracker")
    # training
    lr: float = _key(1e-4, "AdamW peak learning rate", "training")
    batch: int = _key(64, "mini-batch size", "training")
    epochs: int = _key(50, "training epochs", "training")
    warmup_epochs: int = _key(2, "linear warm-up epochs", "training")
    lambda1: float = _key(1.0, "state loss weight", "training")
    lambda2: float = _key(0.2, "confidence (NLL) loss weight", "training")
    grad_clip: float = _key(5.0, "global gradient-norm clip", "training")
    weight_decay: float = _key(0.01, "AdamW decoupled weight decay", "training")
    state_loss_target: str = _key("fused", "state loss applies to: fused, mamba or both", "training")
    gap_prob: float = _key(0.0, "fraction of windows with a simulated miss", "training")
    max_gap: int = _key(7, "longest simulated miss (frames)", "training")
    # evaluation
    eval_iou: float = _key(0.5, "IoU threshold for metric matching", "evaluation")
    # paths
    data: str = _key("", "dataset directory (synth output, train input)", "paths")
    out: str = _key("", "output file or directory", "paths")
    checkpoint: str = _key("", "model checkpoint file", "paths")
    det: str = _key("", "detections file (det.txt)", "paths")
    gt: str = _key("", "ground-truth file (gt.txt)", "paths")
    results: str = _key("", "tracker results file", "paths")
    resume: str = _key("", "checkpoint to resume training from", "paths")

    # ---------------------------------------------------------------- views
    def tracker_config(self) -> TrackerConfig:
        cfg = TrackerConfig(tau_high=self.tau_high, tau_low=self.tau_low, iou_gate=self.iou_gate,
                            n_init=self.n_init, max_age=self.max_age, weights=(self.w1, self.w2, self.w3),
                            trend_sign=self.trend_sign, fusion=self.fusion, association=self.association,
                            lost_history=self.lost_history)
        cfg.validate()
        return cfg

    def train_config(self) -> TrainConfig:
        cfg = TrainConfig(lr=self.lr, batch=self.batch, epochs=self.epochs, warmup_epochs=self.warmup_epochs,
                          lambda1=self.lambda1, lambda2=self.lambda2, seed=self.seed, grad_clip=self.grad_clip,
                          weight_decay=self.weight_decay, state_loss_target=self.state_loss_target)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.window != 8:
            raise ConfigError(f"window is fixed at 8 by the model architecture, got {self.window}")
        if self.num_keyframes < 1:
            raise ConfigError(f"num_keyframes must be >= 1, got {self.num_keyframes}")
        if not 0.0 <= self.gap_prob <= 1.0:
            raise ConfigError(f"gap_prob must lie in [0, 1], got {self.gap_prob}")
        self.tracker_config()
        self.train_config()


CONFIG_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(name: str, raw) -> object:
    f = CONFIG_FIELDS[name]
    kind = type(f.default)
    if isinstance(raw, kind):
        return raw
    text = str(raw).strip()
    try:
        if kind is bool:
            return text.lower() in ("1", "true", "yes", "on")
        return kind(float(text)) if kind is int and "." in text else kind(text)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {text!r} as {kind.__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _convert(key, value)
    return out


def load_config_file(path) -> dict[str, object]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(p))


def resolve(cli: dict[str, object] | None = None, file_values: dict[str, object] | None = None) -> RunConfig:
    """Merge layers: ``cli`` (None values ignored) over ``file_values`` over defaults."""
    merged: dict[str, object] = {}
    for layer in (file_values or {}, cli or {}):
        for k, v in layer.items():
            if k not in CONFIG_FIELDS:
                raise ConfigError(f"unknown config key {k!r}")
            if v is not None:
                merged[k] = _convert(k, v)
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{name} = {getattr(cfg, name)}\n" for name in CONFIG_FIELDS)
