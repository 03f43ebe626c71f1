"""``dmtrack`` command-line entry point.

Subcommands: synth, train, track, eval, gradcheck, plotdata.
Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import metrics, mot_io, synth
from .errors import ConfigError, DataError, DMTrackError, NumericalError
from .gradcheck import format_report, run_gradcheck
from .predictor import MotionPredictor
from .tensor import checkpoint as ckpt
from .tracker import Tracker, format_results, run_tracker
from .training import (
    LOSS_CSV_HEADER,
    EpochLoss,
    TrainingDiverged,
    build_windows,
    format_loss_csv,
    save_checkpoint,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
PLOTDATA_COLUMNS = ("frame", "id", "cx", "cy", "a", "h", "conf", "matched_gt_id", "iou")


class UsageError(DMTrackError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which is reserved for data errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key = value config file (flags override it)")
    groups: dict[str, argparse._ArgumentGroup] = {}
    for name, f in cfgmod.CONFIG_FIELDS.items():
        group = f.metadata["group"]
        if group not in groups:
            groups[group] = p.add_argument_group(f"{group} keys")
        default = f.default if f.default != "" else "unset"
        groups[group].add_argument(f"--{name}", default=None, metavar=type(f.default).__name__.upper(),
                                   help=f"{f.metadata['help']} (default: {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmtrack", description="Motion-only multi-object tracking with learned motion fusion.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic sequences (needs --out DIR)",
                       description="Write <out>/<preset>-NN/{gt.txt,det.txt,scenario.json}; sequence NN uses seed+NN.")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train the motion predictor (needs --data DIR --out DIR)",
                       description="Train on every gt.txt below --data; writes checkpoint.bin, loss.csv and loss.png "
                                   "into --out.")
    _add_config_flags(p)

    p = sub.add_parser("track", help="run the tracker (needs --det FILE --out FILE)",
                       description="Track a MOT detection file and write MOT results.")
    p.add_argument("--kalman-only", action="store_true", help="force alpha = 1 (Kalman + ByteTrack baseline)")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score results against ground truth (needs --gt, --results)",
                       description="Print MOTA/IDF1/IDSW/FP/FN as a table; --out also writes CSV.")
    _add_config_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of all learnable modules",
                       description="Compare analytic and central-difference gradients.")
    p.add_argument("--trials", type=int, default=100, help="seeded trials per module (default: 100)")
    p.add_argument("--corrupt", choices=("deform_mamba", "motion_gate", "loss_state", "loss_conf", "joint"),
                   help="test hook: perturb this module's analytic gradient (must be reported as FAIL)")
    _add_config_flags(p)

    p = sub.add_parser("plotdata", help="per-row trajectory CSV and PNG (needs --results, --gt, --out)",
                       description="One CSV row per result row with columns, in order: "
                                   + ",".join(PLOTDATA_COLUMNS)
                                   + ". matched_gt_id is -1 and iou 0 when the box matched no ground truth. "
                                     "A trajectory PNG is written next to the CSV.")
    _add_config_flags(p)
    return parser


def _resolve(args) -> cfgmod.RunConfig:
    cli = {k: getattr(args, k) for k in cfgmod.CONFIG_FIELDS if getattr(args, k, None) is not None}
    file_values = cfgmod.load_config_file(args.config) if args.config else {}
    return cfgmod.resolve(cli, file_values)


def _need(cfg: cfgmod.RunConfig, *keys: str) -> None:
    missing = [k for k in keys if not getattr(cfg, k)]
    if missing:
        raise UsageError("missing required key(s): " + ", ".join(f"--{k}" for k in missing))


# ----------------------------------------------------------------- commands
def cmd_synth(cfg: cfgmod.RunConfig, out=None) -> list[Path]:
    out = out or sys.stdout
    _need(cfg, "out")
    dirs = []
    for i in range(cfg.num_sequences):
        sc = synth.make_scenario(cfg.preset, cfg.seed + i, num_frames=cfg.num_frames,
                                 sigma_det=cfg.sigma_det, p_miss=cfg.p_miss, fp_rate=cfg.fp_rate)
        seq = synth.generate(sc)
        d = Path(cfg.out) / f"{cfg.preset}-{i:02d}"
        synth.export(seq, d)
        dirs.append(d)
        print(f"{d}: {len(seq.gt)} gt boxes, {len(seq.detections)} detections", file=out)
    return dirs


def _gt_files(data: str) -> list[Path]:
    root = Path(data)
    if root.is_file():
        return [root]
    files = sorted(root.rglob("gt.txt"))
    if not files:
        raise DataError(f"no gt.txt found under {root}")
    return files


def _read_loss_csv(path: Path, upto: int) -> list[EpochLoss]:
    if not path.exists():
        return []
    rows = []
    for line in path.read_text().splitlines()[1:]:
        e, s, c, t = line.split(",")
        if int(e) <= upto:
            rows.append(EpochLoss(int(e), float(s), float(c), float(t)))
    return rows


def cmd_train(cfg: cfgmod.RunConfig, out=None) -> Path:
    out = out or sys.stdout
    from .plotting import plot_loss_curve

    _need(cfg, "data", "out")
    gts = [mot_io.read_gt(f) for f in _gt_files(cfg.data)]
    stats: dict = {}
    samples = build_windows(gts, stats=stats, gap_prob=cfg.gap_prob, max_gap=cfg.max_gap, seed=cfg.seed)
    print(f"{stats['samples']} training windows ({stats['skipped_runs']} short runs skipped)", file=out)
    tcfg = cfg.train_config()
    resume = ckpt.load(cfg.resume) if cfg.resume else None
    out_dir = Path(cfg.out)
    ck_path, csv_path, png_path = out_dir / "checkpoint.bin", out_dir / "loss.csv", out_dir / "loss.png"
    previous = _read_loss_csv(csv_path, int(resume.get("train.epoch", 0))) if resume is not None else []

    def report(rec: EpochLoss) -> None:
        print(f"epoch {rec.epoch:3d}  state {rec.state:.5f}  conf {rec.conf:.5f}  total {rec.total:.5f}",
              file=out, flush=True)

    try:
        result = train(samples, tcfg, resume=resume, on_epoch=report)
    except TrainingDiverged as exc:
        save_checkpoint(ck_path, exc.result)
        mot_io.write_text(csv_path, format_loss_csv(previous + exc.result.curve))
        raise
    curve = previous + result.curve
    save_checkpoint(ck_path, result)
    mot_io.write_text(csv_path, format_loss_csv(curve))
    if curve:
        plot_loss_curve(curve, png_path)
    print(f"wrote {ck_path} (step {result.step}), {csv_path}", file=out)
    return ck_path


def cmd_track(cfg: cfgmod.RunConfig, kalman_only: bool = False, out=None) -> Path:
    out = out or sys.stdout
    _need(cfg, "det", "out")
    tcfg = cfg.tracker_config()
    predictor = None
    if kalman_only:
        tcfg.fusion = "kalman"
    if tcfg.fusion != "kalman":
        _need(cfg, "checkpoint")
        predictor = MotionPredictor.from_checkpoint(cfg.checkpoint, num_keyframes=cfg.num_keyframes)
    dets = mot_io.read_detections(cfg.det)
    rows = run_tracker(dets, Tracker(tcfg, predictor))
    mot_io.write_text(cfg.out, format_results(rows))
    print(f"wrote {len(rows)} result rows to {cfg.out}", file=out)
    return Path(cfg.out)


def cmd_eval(cfg: cfgmod.RunConfig, out=None) -> metrics.MotSummary:
    out = out or sys.stdout
    _need(cfg, "gt", "results")
    gt = mot_io.read_gt(cfg.gt)
    res = mot_io.read_results(cfg.results)
    summary = metrics.summarize(gt, res, cfg.eval_iou)
    table = {Path(cfg.results).stem: summary}
    print(metrics.format_table(table), end="", file=out)
    if cfg.out:
        mot_io.write_text(cfg.out, metrics.format_csv(table))
    return summary


def cmd_gradcheck(cfg: cfgmod.RunConfig, trials: int = 100, corrupt: str | None = None, out=None) -> bool:
    out = out or sys.stdout
    reports = run_gradcheck(trials=trials, seed=cfg.seed, corrupt=corrupt)
    text = format_report(reports)
    print(text, end="", file=out)
    if cfg.out:
        mot_io.write_text(cfg.out, text)
    return all(r.passed for r in reports)


def plotdata_rows(gt: np.ndarray, res: np.ndarray, iou_threshold: float = 0.5) -> list[tuple]:
    from .association import iou_matrix

    matching = metrics.match_frames(gt, res, iou_threshold)
    pair_of = {(f.frame, h): o for f in matching.frames for o, h in f.pairs}
    rows = []
    for r in res:
        frame, tid = int(r[0]), int(r[1])
        gid = pair_of.get((frame, tid), -1)
        ov = 0.0
        if gid != -1:
            g = gt[(gt[:, 0] == frame) & (gt[:, 1] == gid)][0]
            corners = lambda b: np.array([[b[2], b[3], b[2] + b[4], b[3] + b[5]]])  # noqa: E731
            ov = float(iou_matrix(corners(g), corners(r))[0, 0])
        cx, cy, a, h = mot_io.tlwh_to_cxcyah(r[2:6])
        rows.append((frame, tid, cx, cy, a, h, float(r[6]), gid, ov))
    return rows


def cmd_plotdata(cfg: cfgmod.RunConfig, out=None) -> Path:
    out = out or sys.stdout
    from .plotting import plot_trajectories

    _need(cfg, "gt", "results", "out")
    gt = mot_io.read_gt(cfg.gt)
    res = mot_io.read_results(cfg.results)
    rows = plotdata_rows(gt, res, cfg.eval_iou)
    lines = [",".join(PLOTDATA_COLUMNS)]
    lines += [f"{f},{i},{cx:.4f},{cy:.4f},{a:.6f},{h:.4f},{c:.4f},{g},{ov:.6f}" for f, i, cx, cy, a, h, c, g, ov in rows]
    mot_io.write_text(cfg.out, "\n".join(lines) + "\n")
    png = Path(cfg.out).with_suffix(".png")
    plot_trajectories(res, png, gt=gt)
    print(f"wrote {len(rows)} rows to {cfg.out} and {png}", file=out)
    return Path(cfg.out)


# --------------------------------------------------------------------- main
def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    try:
        cfg = _resolve(args)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "track":
            cmd_track(cfg, kalman_only=args.kalman_only)
        elif args.command == "eval":
            cmd_eval(cfg)
        elif args.command == "gradcheck":
            if not cmd_gradcheck(cfg, trials=args.trials, corrupt=args.corrupt):
                return EXIT_NUMERICAL
        elif args.command == "plotdata":
            cmd_plotdata(cfg)
    except (UsageError, ConfigError) as exc:
        print(f"dmtrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"dmtrack {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DMTrackError as exc:
        print(f"dmtrack {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
