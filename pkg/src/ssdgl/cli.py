"""Command-line entry point: synth, sample, train, predict, evaluate, gradcheck.

Exit codes: 0 success, 1 check failure, 2 usage or validation error,
3 runtime abort (non-finite loss).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigValidationError, RunConfig, load_config
from .data import LabelRaster, load_cube, load_labels, palette, render_map, save_cube, save_labels, synth_cube
from .metrics import confusion, report
from .network import NetConfig
from .params import load_model, save_model
from .pipeline import fit, make_schedule, make_split, predict
from .trainer import TrainingAborted

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("ssdgl")


class UsageError(Exception):
    pass


def _run_config(args) -> tuple[RunConfig, str]:
    run, source = RunConfig(), "defaults"
    if getattr(args, "config", None):
        run, source = load_config(args.config), str(args.config)
    if getattr(args, "seed", None) is not None:
        run = run.with_overrides(seed=args.seed)
    return run, source


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _fractions(raw: str | None, classes: int) -> tuple[float, ...]:
    if classes < 1:
        raise UsageError(f"--classes must be >= 1, got {classes}")
    if raw is None:
        return (1.0 / classes,) * classes
    vals = tuple(float(v) for v in raw.split(","))
    if len(vals) != classes:
        raise UsageError(f"--fractions has {len(vals)} entries for {classes} classes")
    return vals


def cmd_synth(args) -> int:
    fractions = _fractions(args.fractions, args.classes)
    cube, labels = synth_cube(args.seed, args.height, args.width, args.bands, args.classes, fractions)
    out = _outdir(args.out)
    save_cube(cube, out / "cube.hsic")
    save_labels(labels, out / "labels.hsig")
    print(f"wrote {out / 'cube.hsic'} and {out / 'labels.hsig'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    run, _ = _run_config(args)
    labels = load_labels(args.labels)
    sp = make_split(labels, run)
    schedule, weights = make_schedule(sp, run)
    out = _outdir(args.out)
    save_labels(sp.train_raster(labels), out / "train.hsig")
    save_labels(sp.test_raster(labels), out / "test.hsig")
    for s in range(schedule.alpha):
        save_labels(schedule.mask(s) * labels.labels, out / f"mask_{s:02d}.hsig")
    rows = [f"{k}\t{int(n)}\t{w:.12g}" for k, (n, w) in enumerate(zip(sp.train_counts, weights.weights), 1)]
    (out / "weights.tsv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))
    print(f"train {int(sp.train_counts.sum())} test {len(sp.test)} strata {schedule.alpha} sum_w {weights.weights.sum():.12g}")
    return EXIT_OK


def cmd_train(args) -> int:
    run, source = _run_config(args)
    cube = load_cube(args.cube)
    labels = load_labels(args.labels)
    out = _outdir(args.out)
    model_path = out / "model.ssdm"

    def progress(epoch, mean):
        log.info("epoch %d mean loss %.6g", epoch, mean)

    start = time.perf_counter()
    try:
        res = fit(cube, labels, run, checkpoint_path=str(model_path), on_epoch=progress)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        if model_path.exists():
            print(f"last checkpoint kept at {model_path}", file=sys.stderr)
        return EXIT_ABORT
    elapsed = time.perf_counter() - start
    save_model(model_path, res.params, res.header)
    res.log.write(out / "train.log", with_time=args.log_time)
    save_labels(res.split.train_raster(labels), out / "train.hsig")
    save_labels(res.split.test_raster(labels), out / "test.hsig")
    losses = res.log.losses()
    summary = [
        f"config = {source}",
        f"seed = {run.seed}",
        f"epochs = {run.epochs}",
        f"iterations = {len(losses)}",
        f"final_loss = {losses[-1]:.9g}" if losses else "final_loss = -",
        f"train_pixels = {int(res.split.train_counts.sum())}",
        f"test_pixels = {len(res.split.test)}",
        f"parameters = {res.params.num_values()}",
        f"seconds = {elapsed:.1f}",
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


def cmd_predict(args) -> int:
    header, params = load_model(args.model)
    net = NetConfig.from_header(header)
    cube = load_cube(args.cube)
    if cube.bands != net.in_bands:
        raise UsageError(f"cube has {cube.bands} bands, model expects {net.in_bands}")
    pred = predict(cube, params, net)
    render_map(pred, palette(net.num_classes), args.out_map)
    save_labels(pred, args.out_labels)
    print(f"wrote {args.out_map} and {args.out_labels} ({pred.shape[0]}x{pred.shape[1]})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred = load_labels(args.pred)
    truth = load_labels(args.truth)
    if pred.shape != truth.shape:
        raise UsageError(f"prediction {pred.shape} and truth {truth.shape} differ in size")
    idx = np.flatnonzero(truth.labels.ravel())
    m = args.classes or max(truth.num_classes, pred.num_classes)
    cm = confusion(pred.labels, truth.labels, idx, num_classes=m)
    rep = report(cm)
    print(rep.to_text(), end="")
    if cm.flagged:
        print(f"warning: {int(cm.unassigned.sum())} evaluated pixels predicted as background", file=sys.stderr)
    if args.out_csv:
        Path(args.out_csv).write_text(cm.to_csv())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import TOLERANCE, default_suite

    errors = default_suite(seed=args.seed or 0)
    for name, err in errors.items():
        print(f"{name}\t{err:.3e}")
    worst = max(errors.values())
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if worst <= TOLERANCE else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssdgl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--config", type=Path, help="key = value run configuration")
        p.add_argument("--seed", type=int, help="overrides the config seed")

    p = sub.add_parser("synth", help="write a synthetic cube and label raster")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=32)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--fractions", help="comma-separated class fractions (default: equal shares)")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="dump the split, stratum masks and class weights")
    shared(p)
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a model on a cube and label raster")
    shared(p)
    p.add_argument("--cube", required=True, type=Path)
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--log-time", action="store_true",
                   help="record wall-clock seconds in train.log (makes the log run-dependent)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify every pixel of a cube")
    shared(p)
    p.add_argument("--cube", required=True, type=Path)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--out-map", required=True, type=Path)
    p.add_argument("--out-labels", required=True, type=Path)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="OA, AA, kappa and per-class accuracy")
    shared(p)
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--truth", required=True, type=Path, help="raster whose nonzero pixels form the eval set")
    p.add_argument("--classes", type=int, default=0)
    p.add_argument("--out-csv", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the full model")
    shared(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (UsageError, ConfigValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
