"""Command-line interface: ``tatd fit``, ``tatd predict`` and ``tatd sweep``.

Exit status is 0 on success, 1 on runtime failures (bad input data,
divergence) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np
from threadpoolctl import threadpool_limits

from . import plots, synth
from .errors import DivergenceError, TatdError
from .model import evaluate, load_checkpoint, predict_entries, save_checkpoint
from .optimizer import STRATEGIES, TrainConfig, default_spec, fit
from .tensor_store import (
    file_digest,
    ingest,
    read_index_rows,
    slice_census,
    split,
    z_normalize,
)

log = logging.getLogger("tatd")

THREADS_ENV = "TATD_THREADS"
EXPERIMENTS = ("sparsity", "penalty", "rank", "optimizers", "density")

FIT_DEFAULTS = dict(rank=10, window=3, sigma=0.5, lambda_t=100.0, lambda_r=1e-2, lr=1e-2,
                    max_outer=100, max_inner=100, patience_outer=5)


class UsageError(Exception):
    pass


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_train_flags(p, defaults):
    g = p.add_argument_group("training")
    g.add_argument("--rank", type=int, default=defaults["rank"])
    g.add_argument("--window", type=int, default=defaults["window"],
                   help="odd smoothing window size (>= 3)")
    g.add_argument("--sigma", type=float, default=defaults["sigma"])
    g.add_argument("--lambda-t", type=float, default=defaults["lambda_t"])
    g.add_argument("--lambda-r", type=float, default=defaults["lambda_r"])
    g.add_argument("--lr", type=float, default=defaults["lr"])
    g.add_argument("--max-outer", type=int, default=defaults["max_outer"])
    g.add_argument("--max-inner", type=int, default=defaults["max_inner"])
    g.add_argument("--patience", type=int, default=defaults["patience_outer"])
    g.add_argument("--strategy", choices=STRATEGIES, default="als_adam")
    g.add_argument("--no-sparsity-penalty", action="store_true",
                   help="use a flat smoothing penalty for every time slice")
    g.add_argument("--time-budget", type=float, default=None,
                   help="wall-clock limit per fit in seconds")


def _add_common(p):
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--threads", type=int, default=None,
                   help=f"cap on numerical worker threads (default: ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tatd", description="Smoothness-regularized CP decomposition of sparse temporal tensors")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="train a model on a delimited tensor file")
    f.add_argument("--data", required=True)
    f.add_argument("--modes", type=int, required=True, help="number of index columns")
    f.add_argument("--time-mode", type=int, default=1, help="time mode, counted from 1")
    f.add_argument("--zero-based", action="store_true", help="file indices start at 0")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.add_argument("--no-plots", action="store_true")
    _add_train_flags(f, FIT_DEFAULTS)
    _add_common(f)

    p = sub.add_parser("predict", help="reconstruct entries from a saved model")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--indices", required=True, help="file with one index tuple per line")
    p.add_argument("--zero-based", action="store_true")
    p.add_argument("--out", help="output file (default: stdout)")
    _add_common(p)

    s = sub.add_parser("sweep", help="run a benchmark experiment")
    s.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    s.add_argument("--out", required=True)
    s.add_argument("--data", help="tensor file (density experiment)")
    s.add_argument("--modes", type=int, help="index columns in --data")
    s.add_argument("--time-mode", type=int, default=1)
    s.add_argument("--zero-based", action="store_true")
    s.add_argument("--seeds", type=_int_list, default=[0])
    s.add_argument("--dims", type=_int_list, default=list(synth.SynthSpec.dims))
    s.add_argument("--true-rank", type=int, default=synth.SynthSpec.rank)
    s.add_argument("--signal", choices=synth.SIGNALS, default=synth.SynthSpec.signal)
    s.add_argument("--period", type=float, default=synth.SynthSpec.period)
    s.add_argument("--walk-step", type=float, default=synth.SynthSpec.walk_step)
    s.add_argument("--noise", type=float, default=synth.SynthSpec.noise)
    s.add_argument("--rate", type=float, default=synth.SynthSpec.rate)
    s.add_argument("--profile", choices=synth.PROFILES, default=synth.SynthSpec.profile)
    s.add_argument("--slope", type=float, default=synth.SynthSpec.slope)
    s.add_argument("--rates", type=_float_list, default=list(synth.SPARSITY_RATES))
    s.add_argument("--lambdas", type=_float_list, default=list(synth.PENALTY_GRID))
    s.add_argument("--ranks", type=_int_list, default=list(synth.RANK_GRID))
    s.add_argument("--no-plots", action="store_true")
    _add_train_flags(s, synth.BENCHMARK_TRAINING)
    _add_common(s)
    return parser, {"fit": f, "predict": p, "sweep": s}


def _read_config(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


def _parse(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sp = subs[args.command]
        try:
            values = _read_config(args.config)
        except (OSError, UsageError) as exc:
            sp.error(str(exc))
        known = {a.dest: a for a in sp._actions}
        for key, val in values.items():
            if key not in known or key in ("config", "help"):
                sp.error(f"unknown config key {key!r}")
            if isinstance(known[key], argparse._StoreTrueAction):
                values[key] = val.lower() in ("1", "true", "yes", "on")
            elif known[key].choices is not None and val not in known[key].choices:
                sp.error(f"config key {key!r}: invalid choice {val!r} "
                         f"(choose from {', '.join(map(str, known[key].choices))})")
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    return parser, subs, args


def _train_config(args, seed) -> TrainConfig:
    return TrainConfig(
        lambda_t=args.lambda_t, lambda_r=args.lambda_r, lr=args.lr, rank=args.rank,
        window=args.window, sigma=args.sigma, max_outer=args.max_outer,
        max_inner=args.max_inner, patience_outer=args.patience, strategy=args.strategy,
        seed=seed, sparsity_penalty=not args.no_sparsity_penalty,
        time_budget=args.time_budget,
    )


def _validate_training(args, sp):
    if args.window < 3 or args.window % 2 == 0:
        sp.error(f"--window must be an odd integer >= 3, got {args.window}")
    if not args.sigma > 0:
        sp.error("--sigma must be positive")
    try:
        return _train_config(args, getattr(args, "seed", 0))
    except ValueError as exc:
        sp.error(str(exc))


def _write_manifest(out_dir, command, args, outputs, started, **extra):
    path = os.path.join(out_dir, "manifest.json")
    manifest = {
        "command": command,
        "arguments": {k: v for k, v in sorted(vars(args).items())},
        "outputs": sorted(os.path.relpath(p, out_dir) for p in outputs),
        "started": started,
        "finished": _now(),
        **extra,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")
    return path


def _fingerprint(path, x):
    return {"path": os.path.abspath(path), "entries": x.nnz, "dims": list(x.dims),
            "sha256": file_digest(path)}


def cmd_fit(args, sp) -> int:
    config = _validate_training(args, sp)
    if not 1 <= args.time_mode <= args.modes:
        sp.error(f"--time-mode must be between 1 and {args.modes}")
    started = _now()
    x = ingest(args.data, args.modes, args.time_mode - 1, one_based=not args.zero_based)
    xn, mean, std = z_normalize(x)
    parts = split(xn, args.seed)
    spec = default_spec(parts.train, config)
    model, report = fit(parts.train, parts.validation, config, spec=spec)
    rmse, mae = evaluate(model, parts.test)

    os.makedirs(args.out, exist_ok=True)
    outputs = save_checkpoint(model, os.path.join(args.out, "checkpoint"),
                              mean=mean, std=std, seed=args.seed,
                              one_based=not args.zero_based)
    for name, writer in (("report.csv", report.to_csv),
                         ("timings.csv", report.timings_to_csv)):
        writer(os.path.join(args.out, name))
        outputs.append(os.path.join(args.out, name))
    wpath = os.path.join(args.out, "smoothing_weights.csv")
    bpath = os.path.join(args.out, "smoothing_beta.csv")
    spec.to_csv(wpath, bpath)
    outputs += [wpath, bpath]
    if not args.no_plots and report.records:
        outputs.append(plots.training_curve(report, os.path.join(args.out, "training_curve.png")))

    results = {
        "test_rmse": rmse, "test_mae": mae,
        "test_rmse_original": rmse * std, "test_mae_original": mae * std,
        "best_iteration": report.best_iteration, "stopping_reason": report.stopping_reason,
        "iterations": len(report.records),
    }
    _write_manifest(args.out, "fit", args, outputs, started,
                    config=asdict(config), data=_fingerprint(args.data, x),
                    normalization={"mean": mean, "std": std}, results=results)
    print(f"test RMSE {rmse:.6f}  MAE {mae:.6f}  (normalized)")
    print(f"test RMSE {rmse * std:.6f}  MAE {mae * std:.6f}  (original scale)")
    return 0


def cmd_predict(args, sp) -> int:
    model, manifest = load_checkpoint(args.model)
    rows = read_index_rows(args.indices, model.order, one_based=not args.zero_based)
    dims = np.asarray(model.dims)
    good, bad = [], []
    for lineno, idx in rows:
        arr = np.asarray(idx)
        (good if np.all((arr >= 0) & (arr < dims)) else bad).append((lineno, idx))
    preds = predict_entries(model, [i for _, i in good]) if good else np.empty(0)
    mean, std = manifest.get("mean", 0.0), manifest.get("std", 1.0)
    shift = 0 if args.zero_based else 1
    lines = ["\t".join([*(str(i + shift) for i in idx), repr(float(v * std + mean))])
             for (_, idx), v in zip(good, preds)]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for lineno, idx in bad:
        shown = tuple(i + shift for i in idx)
        print(f"error: line {lineno}: index {shown} outside model dims "
              f"{tuple(model.dims)}", file=sys.stderr)
    return 1 if bad else 0


def _write_rows(rows, columns, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return path


def cmd_sweep(args, sp) -> int:
    started = _now()
    os.makedirs(args.out, exist_ok=True)
    out = lambda name: os.path.join(args.out, name)  # noqa: E731
    outputs = []
    extra = {}
    if args.experiment == "density":
        if not args.data or not args.modes:
            sp.error("the density experiment needs --data and --modes")
        x = ingest(args.data, args.modes, args.time_mode - 1, one_based=not args.zero_based)
        census = slice_census(x)
        census.to_csv(out("census.csv"))
        outputs.append(out("census.csv"))
        if not args.no_plots:
            outputs.append(plots.density_histogram(census.counts, out("density.png")))
        extra["data"] = _fingerprint(args.data, x)
        _write_manifest(args.out, "sweep", args, outputs, started, **extra)
        return 0

    config = _validate_training(args, sp)
    try:
        spec = synth.SynthSpec(
            dims=tuple(args.dims), rank=args.true_rank, time_mode=args.time_mode - 1,
            signal=args.signal, period=args.period, walk_step=args.walk_step,
            noise=args.noise, rate=args.rate, profile=args.profile, slope=args.slope)
    except ValueError as exc:
        sp.error(str(exc))
    seeds = tuple(args.seeds)
    exp = args.experiment
    if exp == "sparsity":
        rows = synth.sparsity_sweep(spec, config, rates=tuple(args.rates), seeds=seeds)
        cols = ["rate", "method", "rmse", "mae"]
        figure = plots.sparsity_curve
    elif exp == "penalty":
        rows = synth.penalty_sweep(spec, config, lambdas=tuple(args.lambdas), seeds=seeds)
        cols = ["lambda_t", "rmse", "mae"]
        figure = plots.penalty_curve
    elif exp == "rank":
        rows = synth.rank_sweep(spec, config, ranks=tuple(args.ranks), seeds=seeds)
        cols = ["rank", "method", "rmse", "mae"]
        figure = plots.rank_curve
    else:
        rows = synth.optimizer_comparison(spec, config, seeds=seeds)
        cols = ["strategy", "val_rmse", "rmse", "mae", "iterations"]
        figure = plots.optimizer_tradeoff
        outputs.append(_write_rows(rows, ["strategy", "seconds"], out("optimizer_timings.csv")))
    outputs.append(_write_rows(rows, cols, out(f"{exp}.csv")))
    if not args.no_plots:
        outputs.append(figure(rows, out(f"{exp}.png")))
    _write_manifest(args.out, "sweep", args, outputs, started,
                    config=asdict(config), synthetic=asdict(spec))
    return 0


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "sweep": cmd_sweep}


def main(argv=None) -> int:
    try:
        parser, subs, args = _parse(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None and os.environ.get(THREADS_ENV):
        threads = int(os.environ[THREADS_ENV])
    sp = subs[args.command]
    try:
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](args, sp)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1
    except (TatdError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
