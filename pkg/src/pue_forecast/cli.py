"""Command-line pipeline: generate -> select-features -> tune -> predict.

Every command writes a JSON manifest alongside its outputs recording the
resolved flags, seeds, paths and wall-clock duration; re-running a command
with the manifest's flags reproduces the data outputs bitwise. All randomness
flows from explicit --seed flags. The PUE_FORECAST_LOG environment variable
(debug / info / warning / error) controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .dataset import (
    TARGET_COLUMN,
    TIMESTAMP_COLUMN,
    denormalize_target,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    normalize,
    split_chronological,
    window,
    write_csv,
)
from .rfecv import (
    DEFAULT_LR_GRID,
    DEFAULT_MAX_DEPTH_GRID,
    DEFAULT_N_ESTIMATORS_GRID,
    load_feature_sets,
    rfecv_grid,
    write_mse_curve_csv,
    write_results_json,
)
from .tuning import (
    DEFAULT_HIDDEN_GRID,
    DEFAULT_LAYERS_GRID,
    DEFAULT_LR_GRID as DEFAULT_TUNE_LR_GRID,
    Checkpoint,
    grid_search,
)

log = logging.getLogger(__name__)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{value} is negative")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"{value} is not in (0, 1)")
    return value


def _setup_logging() -> None:
    name = os.environ.get("PUE_FORECAST_LOG", "warning").strip().lower()
    level = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "error": logging.ERROR,
    }.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _write_manifest(
    path: Path,
    command: str,
    args: argparse.Namespace,
    seeds: list[int],
    inputs: list[str],
    outputs: list[str],
    started: float,
) -> None:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": command,
        "toolkit_version": __version__,
        "flags": flags,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "duration_seconds": time.monotonic() - started,
    }
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")


def cmd_generate(args: argparse.Namespace) -> None:
    started = time.monotonic()
    ds = generate_synthetic(args.samples, args.informative, args.noise, args.seed)
    out = Path(args.output)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    write_csv(ds, out)
    log.info("wrote %d samples x %d features to %s", ds.n_samples, ds.n_features, out)
    _write_manifest(
        Path(str(out) + ".manifest.json"), "generate", args,
        seeds=[args.seed], inputs=[], outputs=[str(out)], started=started,
    )


def cmd_select_features(args: argparse.Namespace) -> None:
    started = time.monotonic()
    ds = load_csv(args.input)
    train_ds, _test_ds = split_chronological(ds, args.split)
    norm = fit_normalizer(ds if args.fit_on_all else train_ds)
    nds = normalize(train_ds, norm)
    results = rfecv_grid(
        nds,
        lr_grid=tuple(args.lr),
        n_estimators_grid=tuple(args.trees),
        max_depth_grid=tuple(args.depth),
        top_k=args.top_k,
        step=args.step,
        folds=args.folds,
        seed=args.seed,
        workers=args.workers,
    )
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    sets_path = outdir / "feature_sets.json"
    curve_path = outdir / "mse_by_count.csv"
    write_results_json(results, sets_path)
    write_mse_curve_csv(results, curve_path)
    log.info("kept %d feature sets in %s", len(results), sets_path)
    _write_manifest(
        outdir / "manifest.json", "select-features", args,
        seeds=[args.seed], inputs=[args.input],
        outputs=[str(sets_path), str(curve_path)], started=started,
    )


def cmd_tune(args: argparse.Namespace) -> None:
    started = time.monotonic()
    ds = load_csv(args.input)
    if args.features:
        feature_sets = load_feature_sets(args.features)
    else:
        feature_sets = [list(ds.feature_names)]
    report = grid_search(
        ds,
        feature_sets,
        mode=args.mode,
        layers_grid=tuple(args.layers),
        hidden_grid=tuple(args.hidden),
        lr_grid=tuple(args.lr),
        window_length=args.window,
        train_fraction=args.split,
        max_epochs=args.max_epochs,
        eval_every=args.eval_every,
        seed=args.seed,
        workers=args.workers,
        fit_on_all=args.fit_on_all,
        pue_units=args.pue_units,
        checkpoint_on_train_loss=args.checkpoint_on_train_loss,
        grad_clip=args.grad_clip,
    )
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    report_path = outdir / "tune_report.csv"
    records_path = outdir / "tune_records.csv"
    report.to_csv(report_path, winners_only=True)
    report.to_records_csv(records_path)
    outputs = [str(report_path), str(records_path)]
    for si, ckpt in sorted(report.checkpoints.items()):
        label = next(
            r.feature_set_label for r in report.records if r.feature_set_index == si
        )
        ckpt_path = outdir / f"checkpoint_{label}.json"
        ckpt.save(ckpt_path)
        outputs.append(str(ckpt_path))
    n_failed = sum(1 for r in report.records if r.failed)
    if n_failed:
        log.warning("%d of %d configs failed", n_failed, len(report.records))
    _write_manifest(
        outdir / "manifest.json", "tune", args,
        seeds=[args.seed],
        inputs=[args.input] + ([args.features] if args.features else []),
        outputs=outputs, started=started,
    )


def cmd_predict(args: argparse.Namespace) -> None:
    started = time.monotonic()
    ckpt = Checkpoint.load(args.checkpoint)
    if ckpt.feature_names is None or ckpt.normalization is None:
        raise ValueError(
            f"{args.checkpoint}: checkpoint lacks stored feature names or "
            f"normalization parameters"
        )
    ds = load_csv(args.input)
    missing = [c for c in ckpt.feature_names if c not in ds.feature_names]
    if missing:
        raise ValueError(
            f"{args.input}: missing feature column(s) required by the "
            f"checkpoint: {missing}"
        )
    sub = ds.select(ckpt.feature_names)
    nds = normalize(sub, ckpt.normalization)
    W = ckpt.config.window
    if nds.n_samples < W:
        raise ValueError(
            f"{args.input}: {nds.n_samples} rows is shorter than the "
            f"checkpoint window length {W}"
        )
    ws = window(nds, W)
    preds = denormalize_target(ckpt.predict(ws.windows), ckpt.normalization)
    out = Path(args.output)
    lines = [f"{TIMESTAMP_COLUMN},predicted_{TARGET_COLUMN}"]
    for i in range(ws.n_windows):
        lines.append(f"{nds.timestamps[W - 1 + i]},{float(preds[i])!r}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("wrote %d predictions to %s", ws.n_windows, out)
    _write_manifest(
        Path(str(out) + ".manifest.json"), "predict", args,
        seeds=[], inputs=[args.checkpoint, args.input],
        outputs=[str(out)], started=started,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pue-forecast",
        description="PUE prediction pipeline: synthetic telemetry, RFECV feature "
        "selection, GRU/BiGRU training and prediction.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic telemetry CSV")
    p.add_argument("--samples", "-n", type=_positive_int, default=5000)
    p.add_argument("--informative", type=_positive_int, default=8)
    p.add_argument("--noise", type=_non_negative_int, default=24)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser(
        "select-features", help="rank feature subsets with RFECV over the estimator grid"
    )
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--output-dir", "-o", default="rfecv_out")
    p.add_argument("--top-k", type=_positive_int, default=6)
    p.add_argument("--step", type=_positive_int, default=1)
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--split", type=_fraction, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--fit-on-all", action="store_true",
                   help="fit the normalizer on all rows instead of the training split")
    p.add_argument("--lr", type=float, nargs="+", default=list(DEFAULT_LR_GRID))
    p.add_argument("--trees", type=_positive_int, nargs="+",
                   default=list(DEFAULT_N_ESTIMATORS_GRID))
    p.add_argument("--depth", type=_positive_int, nargs="+",
                   default=list(DEFAULT_MAX_DEPTH_GRID))
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("tune", help="grid-search GRU/BiGRU over selected feature sets")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--features", "-f", default=None,
                   help="feature_sets.json from select-features; default: all columns")
    p.add_argument("--mode", choices=("gru", "bigru"), default="bigru")
    p.add_argument("--layers", type=_positive_int, nargs="+",
                   default=list(DEFAULT_LAYERS_GRID))
    p.add_argument("--hidden", type=_positive_int, nargs="+",
                   default=list(DEFAULT_HIDDEN_GRID))
    p.add_argument("--lr", type=float, nargs="+", default=list(DEFAULT_TUNE_LR_GRID))
    p.add_argument("--window", type=_positive_int, default=6)
    p.add_argument("--split", type=_fraction, default=0.8)
    p.add_argument("--max-epochs", type=_positive_int, default=4000)
    p.add_argument("--eval-every", type=_positive_int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--fit-on-all", action="store_true")
    p.add_argument("--pue-units", action="store_true",
                   help="report MSE/MAE in PUE units instead of normalized units")
    p.add_argument("--checkpoint-on-train-loss", action="store_true",
                   help="checkpoint on training loss improvements (per epoch) "
                   "instead of held-out MSE at evaluation points")
    p.add_argument("--grad-clip", type=float, default=None,
                   help="global L2 gradient clipping threshold")
    p.add_argument("--output-dir", "-o", default="tune_out")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("predict", help="predict PUE from a checkpoint and telemetry CSV")
    p.add_argument("--checkpoint", "-c", required=True)
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:
        print(f"pue-forecast {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
