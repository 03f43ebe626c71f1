"""Seeded synthetic UAV-like scenarios: ground-truth tracks plus corrupted detections.

A :class:`MotionScenario` spells out every object's motion program
explicitly (initial state, segments, occlusion windows), so the scenario
echo written next to the data fully determines the ground truth.  Only
detection corruption consumes random numbers at generation time, from the
``"synth.detections"`` sub-stream of the scenario seed, in this order per
frame: for each object (ascending index) that is visible, one uniform for
the miss test, then (if kept) four normals (cx, cy, width, height) and one
uniform for the confidence; afterwards the false-positive count (Poisson)
and, per false positive, uniforms for cx, cy, height, aspect ratio and
confidence.  Relative size noise (5%) is tied to ``sigma_det > 0``; with
``sigma_det == 0`` kept detections reproduce the ground-truth boxes exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import mot_io
from .errors import DataError
from .prng import SplitMix64, derive_seed

SEGMENT_KINDS = ("cv", "turn", "accel", "stop")
PRESETS = ("linear", "turns", "occlusion", "crowd", "uav-mix")
SIZE_NOISE = 0.05


@dataclass
class Segment:
    kind: str
    duration: int
    rate: float = 0.0  # turn: rad/frame; accel: px/frame^2; stop: deceleration px/frame^2


@dataclass
class ObjectProgram:
    x: float
    y: float
    heading: float
    speed: float
    height: float
    aspect: float
    segments: list[Segment]
    occlusions: list[tuple[int, int]] = field(default_factory=list)  # (start frame, length)
    size_rate: float = 0.0


@dataclass
class MotionScenario:
    num_frames: int
    width: float = 1280.0
    height: float = 720.0
    objects: list[ObjectProgram] = field(default_factory=list)
    sigma_det: float = 1.0
    p_miss: float = 0.05
    fp_rate: float = 1.0
    seed: int = 0
    v_max: float = 12.0
    name: str = "custom"

    def validate(self) -> None:
        if self.num_frames < 1:
            raise DataError(f"scenario needs at least one frame, got {self.num_frames}")
        if not 0.0 <= self.p_miss <= 1.0:
            raise DataError(f"p_miss must be in [0, 1], got {self.p_miss}")
        for i, obj in enumerate(self.objects):
            total = sum(s.duration for s in obj.segments)
            if total != self.num_frames:
                raise DataError(f"object {i}: segment durations sum to {total}, expected {self.num_frames}")
            for s in obj.segments:
                if s.kind not in SEGMENT_KINDS:
                    raise DataError(f"object {i}: unknown segment kind {s.kind!r}")
            if obj.height <= 0 or obj.aspect <= 0:
                raise DataError(f"object {i}: box size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MotionScenario":
        d = dict(d)
        objs = []
        for o in d.pop("objects", []):
            o = dict(o)
            o["segments"] = [Segment(**s) for s in o["segments"]]
            o["occlusions"] = [tuple(w) for w in o.get("occlusions", [])]
            objs.append(ObjectProgram(**o))
        return cls(objects=objs, **d)


@dataclass
class SyntheticSequence:
    gt: np.ndarray          # (N, 6) frame, id, left, top, width, height (visible boxes only)
    detections: np.ndarray  # (M, 6) frame, left, top, width, height, conf
    det_source: np.ndarray  # (M,) ground-truth id, or -1 for a false positive
    scenario: MotionScenario
    trajectories: np.ndarray = field(default=None, repr=False)  # (objects, frames, 4) cx, cy, a, h

    def frames_of(self, track_id: int) -> np.ndarray:
        return self.gt[self.gt[:, 1] == track_id, 0].astype(int)


# ---------------------------------------------------------------- motion
def integrate(obj: ObjectProgram, num_frames: int, width: float, height: float, v_max: float) -> np.ndarray:
    """Roll one motion program forward; returns (num_frames, 4) of cx, cy, a, h."""
    out = np.empty((num_frames, 4))
    x, y, th, v, h = obj.x, obj.y, obj.heading, min(obj.speed, v_max), obj.height
    a = obj.aspect
    kinds = []
    for seg in obj.segments:
        kinds.extend([seg] * seg.duration)
    for t in range(num_frames):
        if t > 0:
            seg = kinds[t]
            if seg.kind == "turn":
                th += seg.rate
            elif seg.kind == "accel":
                v = min(max(v + seg.rate, 0.0), v_max)
            elif seg.kind == "stop":
                v = max(v - abs(seg.rate), 0.0)
            h = h * (1.0 + obj.size_rate)
            x += v * math.cos(th)
            y += v * math.sin(th)
            half_w, half_h = 0.5 * a * h, 0.5 * h
            if x - half_w < 0 or x + half_w > width:
                th = math.pi - th
                x = min(max(x, half_w), width - half_w)
            if y - half_h < 0 or y + half_h > height:
                th = -th
                y = min(max(y, half_h), height - half_h)
        out[t] = (x, y, a, h)
    return out


def _visible_mask(obj: ObjectProgram, num_frames: int) -> np.ndarray:
    vis = np.ones(num_frames, dtype=bool)
    for start, length in obj.occlusions:
        vis[max(start - 1, 0):max(start - 1 + length, 0)] = False
    return vis


def _clip_box(cx, cy, w, h, width, height):
    x1, y1 = max(cx - w / 2, 0.0), max(cy - h / 2, 0.0)
    x2, y2 = min(cx + w / 2, width), min(cy + h / 2, height)
    return x1, y1, max(x2 - x1, 1e-3), max(y2 - y1, 1e-3)


def generate(scenario: MotionScenario) -> SyntheticSequence:
    """Integrate every program, then corrupt the visible boxes into detections."""
    scenario.validate()
    F = scenario.num_frames
    trajs = np.array([integrate(o, F, scenario.width, scenario.height, scenario.v_max) for o in scenario.objects])
    trajs = trajs.reshape(len(scenario.objects), F, 4)
    visible = np.array([_visible_mask(o, F) for o in scenario.objects]).reshape(len(scenario.objects), F)
    rng = SplitMix64(derive_seed(scenario.seed, "synth.detections"))

    gt_rows, det_rows, source = [], [], []
    hs = [o.height for o in scenario.objects] or [20.0]
    h_lo, h_hi = min(hs), max(hs)
    for t in range(F):
        frame = t + 1
        for k in range(len(scenario.objects)):
            if not visible[k, t]:
                continue
            cx, cy, a, h = trajs[k, t]
            w = a * h
            gt_rows.append((frame, k + 1, cx - w / 2, cy - h / 2, w, h))
            if rng.uniform() < scenario.p_miss:
                continue
            size_std = SIZE_NOISE if scenario.sigma_det > 0 else 0.0
            ncx = cx + rng.normal(0.0, scenario.sigma_det)
            ncy = cy + rng.normal(0.0, scenario.sigma_det)
            nw = w * (1.0 + rng.normal(0.0, size_std))
            nh = h * (1.0 + rng.normal(0.0, size_std))
            conf = rng.uniform(0.7, 1.0)
            if scenario.sigma_det == 0:
                det_rows.append((frame, cx - w / 2, cy - h / 2, w, h, conf))
            else:
                l, tp, ww, hh = _clip_box(ncx, ncy, max(nw, 1e-3), max(nh, 1e-3), scenario.width, scenario.height)
                det_rows.append((frame, l, tp, ww, hh, conf))
            source.append(k + 1)
        for _ in range(rng.poisson(scenario.fp_rate)):
            fh = rng.uniform(h_lo, h_hi)
            fa = rng.uniform(0.5, 2.0)
            fx = rng.uniform(0.0, scenario.width)
            fy = rng.uniform(0.0, scenario.height)
            conf = rng.uniform(0.1, 0.5)
            l, tp, ww, hh = _clip_box(fx, fy, fa * fh, fh, scenario.width, scenario.height)
            det_rows.append((frame, l, tp, ww, hh, conf))
            source.append(-1)
    return SyntheticSequence(
        gt=np.array(gt_rows, dtype=np.float64).reshape(-1, 6),
        detections=np.array(det_rows, dtype=np.float64).reshape(-1, 6),
        det_source=np.array(source, dtype=np.int64),
        scenario=scenario,
        trajectories=trajs,
    )


# --------------------------------------------------------------- presets
def _deg(d: float) -> float:
    return math.radians(d)


def _split_durations(rng: SplitMix64, total: int, lo: int, hi: int) -> list[int]:
    out, left = [], total
    while left > 0:
        d = min(rng.integer(lo, hi), left)
        if 0 < left - d < lo:
            d = left
        out.append(d)
        left -= d
    return out


def _occlusion_windows(rng: SplitMix64, num_frames: int, count: int, lo: int, hi: int) -> list[tuple[int, int]]:
    windows: list[tuple[int, int]] = []
    if num_frames < 4 * hi:
        return windows
    span = (num_frames - 20) // count
    for i in range(count):
        length = rng.integer(lo, hi)
        base = 15 + i * span
        start = base + rng.integer(0, max(span - length - 10, 0))
        windows.append((start, length))
    return windows


def _random_object(rng: SplitMix64, sc: MotionScenario, speed: tuple[float, float],
                   height: tuple[float, float] = (14.0, 28.0)) -> ObjectProgram:
    h = rng.uniform(*height)
    a = rng.uniform(0.6, 1.8)
    margin = 80.0
    return ObjectProgram(
        x=rng.uniform(margin, sc.width - margin),
        y=rng.uniform(margin, sc.height - margin),
        heading=rng.uniform(-math.pi, math.pi),
        speed=rng.uniform(*speed),
        height=h,
        aspect=a,
        segments=[],
        size_rate=rng.uniform(-0.001, 0.001),
    )


def _turn_segments(rng: SplitMix64, F: int, max_rate_deg: float) -> list[Segment]:
    segs = []
    for i, d in enumerate(_split_durations(rng, F, 10, 35)):
        if i % 2 == 0:
            segs.append(Segment("cv", d))
        else:
            segs.append(Segment("turn", d, rng.choice_sign() * _deg(rng.uniform(4.0, max_rate_deg))))
    return segs


def make_scenario(preset: str, seed: int, num_frames: int = 200, **overrides) -> MotionScenario:
    """Build one of the named scenarios; ``overrides`` replace scenario fields."""
    if preset not in PRESETS:
        raise DataError(f"unknown preset {preset!r}; valid presets: {', '.join(PRESETS)}")
    rng = SplitMix64(derive_seed(seed, f"synth.program.{preset}"))
    sc = MotionScenario(num_frames=num_frames, seed=seed, name=preset)
    F = num_frames
    if preset == "linear":
        for _ in range(8):
            o = _random_object(rng, sc, (2.0, 6.0))
            o.segments = [Segment("cv", F)]
            sc.objects.append(o)
    elif preset == "turns":
        for _ in range(10):
            o = _random_object(rng, sc, (4.0, 9.0))
            o.segments = _turn_segments(rng, F, 15.0)
            sc.objects.append(o)
    elif preset == "occlusion":
        for _ in range(10):
            o = _random_object(rng, sc, (3.0, 7.0))
            o.segments = _turn_segments(rng, F, 8.0)
            o.occlusions = _occlusion_windows(rng, F, 2, 10, 20)
            sc.objects.append(o)
    elif preset == "crowd":
        cx, cy = sc.width / 2, sc.height / 2
        for i in range(20):
            ang = 2 * math.pi * i / 20 + rng.uniform(-0.1, 0.1)
            o = _random_object(rng, sc, (2.0, 5.0))
            r = rng.uniform(200.0, 300.0)
            o.x, o.y = cx + r * math.cos(ang), cy + 0.55 * r * math.sin(ang)
            o.heading = ang + math.pi + rng.uniform(-0.2, 0.2)
            o.segments = [Segment("cv", F)]
            sc.objects.append(o)
    else:  # uav-mix
        for i in range(14):
            o = _random_object(rng, sc, (3.0, 8.0))
            segs = []
            for j, d in enumerate(_split_durations(rng, F, 10, 35)):
                kind = ("cv", "turn", "accel", "stop", "accel")[(i + j) % 5]
                rate = {
                    "cv": 0.0,
                    "turn": rng.choice_sign() * _deg(rng.uniform(4.0, 15.0)),
                    "accel": rng.uniform(0.1, 0.4),
                    "stop": rng.uniform(0.2, 0.6),
                }[kind]
                segs.append(Segment(kind, d, rate))
            o.segments = segs
            if i % 2 == 0:
                o.occlusions = _occlusion_windows(rng, F, 2, 10, 20)
            sc.objects.append(o)
    for k, v in overrides.items():
        if not hasattr(sc, k):
            raise DataError(f"unknown scenario field {k!r}")
        setattr(sc, k, v)
    return sc


# ---------------------------------------------------------------- export
def export(seq: SyntheticSequence, directory) -> dict[str, Path]:
    d = Path(directory)
    paths = {"gt": d / "gt.txt", "det": d / "det.txt", "scenario": d / "scenario.json"}
    mot_io.write_text(paths["gt"], mot_io.format_gt(seq.gt))
    mot_io.write_text(paths["det"], mot_io.format_detections(seq.detections))
    mot_io.write_text(paths["scenario"], json.dumps(seq.scenario.to_dict(), indent=1, sort_keys=True) + "\n")
    return paths


def load_sequence(directory) -> SyntheticSequence:
    """Parse an exported directory (detection sources are not stored on disk and come back as -1)."""
    d = Path(directory)
    gt = mot_io.read_gt(d / "gt.txt")
    dets = mot_io.read_detections(d / "det.txt")
    sc_path = d / "scenario.json"
    try:
        scenario = MotionScenario.from_dict(json.loads(sc_path.read_text()))
    except OSError:
        scenario = MotionScenario(num_frames=int(max(gt[:, 0].max(initial=0), dets[:, 0].max(initial=0), 1)))
    except (ValueError, TypeError) as exc:
        raise DataError(f"{sc_path}: invalid scenario echo: {exc}") from None
    return SyntheticSequence(gt, dets, np.full(len(dets), -1, dtype=np.int64), scenario)
