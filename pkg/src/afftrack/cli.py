"""Command-line interface for the tracking pipeline.

Subcommands: ``synth`` (generate a scene), ``train`` (fit the affinity
network), ``track`` (run the on-line tracker), ``eval`` (CLEAR-MOT style
metrics) and ``gradcheck`` (finite-difference verification). Exit codes:
0 success, 1 check failure, 2 usage or validation error, 3 I/O error.
Every command is deterministic for a fixed ``--seed``.
"""

from __future__ import annotations

import argparse
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_model_config, dump_model_section, load_run_config
from .data import (
    MotCsvError,
    TrainingPairs,
    group_by_frame,
    load_sequence,
    parse_mot_csv,
    read_key_values,
    write_mot_csv,
)
from .fileio import atomic_write_text
from .gradcheck import TOLERANCE, check_model_gradients
from .labels import CapacityError
from .metrics import EvaluationError, evaluate, format_results, write_event_log, write_results
from .model import AffinityModel, TrainSettings, load_model, train_model
from .synth import SynthConfig, SynthConfigError, generate_synthetic, write_sequence
from .tracker import ModelAffinityProvider, TrackerParams, track_sequence
from .weightfile import WeightFileError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afftrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"afftrack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    p.add_argument("--out", required=True, help="target sequence directory (must not already hold files)")
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--objects", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--occlusion-prob", type=float, default=0.0)
    p.add_argument("--enter-prob", type=float, default=0.0)
    p.add_argument("--leave-prob", type=float, default=0.0)
    p.add_argument("--det-dropout", type=float, default=0.05)
    p.add_argument("--det-jitter", type=float, default=1.0)
    p.add_argument("--name", default=None, help="sequence name (defaults to the directory name)")

    p = sub.add_parser("train", help="train the affinity network on sequence directories")
    p.add_argument("--data", required=True, help="a sequence directory, or a directory of them")
    p.add_argument("--config", default=None, help="key=value configuration file")
    p.add_argument("--out", required=True, help="output weights container")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--epochs", type=int, default=None, help="override the configured epoch count")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG report")

    p = sub.add_parser("track", help="run the tracker over a sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--seq", required=True, help="sequence directory")
    p.add_argument("--dets", required=True, help="detection CSV")
    p.add_argument("--out", required=True, help="hypothesis CSV")
    p.add_argument("--delta-b", type=int, default=15)
    p.add_argument("--delta-w", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("eval", help="evaluate a hypothesis file against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", default=None, help="results file (default: eval_results.txt beside --hyp)")
    p.add_argument("--events", default=None, help="optional per-frame event log CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--corrupt", action="store_true",
                   help="perturb one analytic gradient to verify the checker detects it")
    return parser


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}", EXIT_IO)
    return p


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"{what} not found: {path}", EXIT_IO)
    return p


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise CliError(f"refusing to overwrite non-empty directory {out_dir}", EXIT_USAGE)
    cfg = SynthConfig(
        width=args.width,
        height=args.height,
        frames=args.frames,
        objects=args.objects,
        name=args.name or out_dir.name,
        occlusion_prob=args.occlusion_prob,
        enter_prob=args.enter_prob,
        leave_prob=args.leave_prob,
        det_dropout=args.det_dropout,
        det_jitter=args.det_jitter,
        max_objects=max(args.objects, 8),
    )
    seq = generate_synthetic(cfg, args.seed)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        write_sequence(seq, staging)
        if out_dir.exists():
            out_dir.rmdir()
        staging.rename(out_dir)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    print(f"wrote {len(seq.frames)} frames, {sum(len(v) for v in seq.gt.values())} gt rows, "
          f"{sum(len(v) for v in seq.dets.values())} detections to {out_dir}")
    return EXIT_OK


def _discover_sequences(root: Path) -> list[Path]:
    if (root / "seqinfo.txt").is_file():
        return [root]
    found = sorted(d for d in root.iterdir() if (d / "seqinfo.txt").is_file())
    if not found:
        raise CliError(f"no sequence directories under {root}", EXIT_IO)
    return found


def cmd_train(args) -> int:
    data_root = _require_dir(args.data, "data directory")
    overrides: dict[str, str] = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.epochs is not None:
        overrides["epochs"] = str(args.epochs)
    config_path = _require_file(args.config, "configuration file") if args.config else None
    run_cfg = load_run_config(config_path, overrides)
    model_cfg = build_model_config(run_cfg)

    sequences = [load_sequence(d) for d in _discover_sequences(data_root)]
    dataset = TrainingPairs(
        sequences,
        count=run_cfg.pairs,
        n_v=run_cfg.n_v,
        n_max=model_cfg.n_m,
        out_h=model_cfg.input_h,
        out_w=model_cfg.input_w,
        seed=run_cfg.seed,
        augment=run_cfg.augment,
        mean_pixel=run_cfg.mean_pixel,
    )
    if len(dataset) == 0 and run_cfg.epochs > 0:
        raise CliError("training dataset is empty", EXIT_USAGE)

    model = AffinityModel(model_cfg, rng=np.random.default_rng([run_cfg.seed, 5]))
    settings = TrainSettings(
        lr=run_cfg.lr,
        momentum=run_cfg.momentum,
        weight_decay=run_cfg.weight_decay,
        lr_drops=run_cfg.lr_drops,
        epochs=run_cfg.epochs,
        batch_size=run_cfg.batch_size,
        seed=run_cfg.seed,
    )

    def report(log) -> None:
        print(f"epoch {log.epoch:3d}  lr {log.lr:.5f}  loss {log.mean_loss:.4f} "
              f"(f {log.forward:.4f}  b {log.backward:.4f}  c {log.consistency:.4f} "
              f"a {log.assembly:.4f})")

    logs = train_model(model, dataset, settings, progress=report) if settings.epochs > 0 else []

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    model.save(out_path)
    atomic_write_text(out_path.with_suffix(out_path.suffix + ".config"), dump_model_section(run_cfg))

    log_path = out_path.with_name(out_path.stem + "_training_log.csv")
    header = "epoch,lr,mean_loss,L_f,L_b,L_c,L_a"
    rows = [f"{l.epoch},{l.lr:.6g},{l.mean_loss:.6f},{l.forward:.6f},{l.backward:.6f},"
            f"{l.consistency:.6f},{l.assembly:.6f}" for l in logs]
    atomic_write_text(log_path, "\n".join([header] + rows) + "\n")
    if not args.no_figures:
        from .report import save_training_curves

        save_training_curves(logs, out_path.with_name(out_path.stem + "_training_curves.png"))
    print(f"saved model to {out_path} ({len(logs)} epochs logged)")
    return EXIT_OK


def _load_model_with_sidecar(path: Path) -> AffinityModel:
    sidecar = path.with_suffix(path.suffix + ".config")
    if not sidecar.is_file():
        raise CliError(f"missing model sidecar {sidecar}; cannot rebuild the architecture", EXIT_IO)
    run_cfg = load_run_config(None, dict(read_key_values(sidecar)))
    model_cfg = build_model_config(run_cfg)
    return load_model(path, model_cfg)


def cmd_track(args) -> int:
    model_path = _require_file(args.model, "model file")
    seq_dir = _require_dir(args.seq, "sequence directory")
    dets_path = _require_file(args.dets, "detection file")
    model = _load_model_with_sidecar(model_path)
    seq = load_sequence(seq_dir)
    detections = group_by_frame(parse_mot_csv(dets_path))
    params = TrackerParams(delta_b=args.delta_b, delta_w=args.delta_w)
    records = track_sequence(ModelAffinityProvider(model), seq, detections, params)
    write_mot_csv(args.out, records)
    if not args.no_figures:
        from .report import save_track_paths

        out_path = Path(args.out)
        save_track_paths(records, (seq.width, seq.height),
                         out_path.with_name(out_path.stem + "_paths.png"))
    print(f"wrote {len(records)} hypothesis rows ({len({r.id for r in records})} tracks) to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    gt_path = _require_file(args.gt, "ground-truth file")
    hyp_path = _require_file(args.hyp, "hypothesis file")
    gt = parse_mot_csv(gt_path)
    hyp = parse_mot_csv(hyp_path)
    result = evaluate(gt, hyp, iou_threshold=args.iou)
    out_path = Path(args.out) if args.out else hyp_path.with_name("eval_results.txt")
    write_results(result, out_path)
    if args.events:
        write_event_log(result.events, args.events)
    if not args.no_figures:
        from .report import save_eval_summary

        save_eval_summary(result, out_path.with_suffix(".png"))
    sys.stdout.write(format_results(result))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = check_model_gradients(trials=args.trials, seed=args.seed, corrupt=args.corrupt)
    width = max(len(name) for name in report.worst)
    print(f"finite-difference check over {report.trials} random models (tolerance {TOLERANCE:g})")
    for name in sorted(report.worst):
        status = "ok" if report.worst[name] <= TOLERANCE else "FAIL"
        print(f"  {name:<{width}}  {report.worst[name]:.3e}  {status}")
    print(f"max relative error: {report.max_error:.3e}")
    if not report.passed():
        print("gradient check FAILED")
        return EXIT_CHECK_FAILED
    print("gradient check passed")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "track": cmd_track,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, SynthConfigError, EvaluationError, CapacityError, ValueError) as exc:
        if isinstance(exc, (MotCsvError, WeightFileError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
