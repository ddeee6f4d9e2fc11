"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 numerical/convergence failure, 4 I/O or
checkpoint format problem. Every command that draws random numbers takes its
entropy from ``--seed`` only.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from contextlib import contextmanager

import numpy as np

from .checkpoint import load_checkpoint
from .errors import CheckpointError, ConfigError, ConvergenceError, NumericalError, RangeError
from .evaluate import data_log_density, grid_points, sample, sampler_log_density
from .flow import FlowConfig, count_params, flow_inverse, stack_forward
from .targets import DATASETS, ENERGIES
from .trainer import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

logger = logging.getLogger("bnaf")


class UsageError(Exception):
    pass


def _fmt(v: float) -> str:
    return f"{v:.17g}"


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _write_csv(fh, header, rows):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])


def write_grid(path, points: np.ndarray, log_density: np.ndarray):
    with _output(path) as fh:
        _write_csv(fh, ("x", "y", "log_density"), np.column_stack([points, log_density]))


def _grid_log_density(ckpt, points):
    stack = ckpt.stack()
    if ckpt.config.objective == "mle":
        return data_log_density(stack, points)
    return sampler_log_density(stack, points)


# ---------------------------------------------------------------------------
# commands


def _train_config(args, objective: str, target: str, out: str) -> TrainConfig:
    return TrainConfig(
        objective=objective, target=target, d=2, k=args.k, layers=args.layers, n_flows=args.flows,
        batch_size=args.batch, max_iterations=args.iters, initial_lr=args.lr, decay=args.decay,
        patience=args.patience, polyak=args.polyak, seed=args.seed, eval_interval=args.eval_interval,
        checkpoint_interval=args.checkpoint_interval, checkpoint_path=os.path.join(out, "checkpoint.bnaf"),
    )


def _prepare_out(out: str):
    if os.path.exists(out) and not os.path.isdir(out):
        raise UsageError(f"--out {out} exists and is not a directory")
    os.makedirs(out, exist_ok=True)
    metrics = os.path.join(out, "metrics.csv")
    if os.path.exists(metrics):
        os.unlink(metrics)
    return metrics


def _run_training(config: TrainConfig, metrics: str, out: str):
    result = train(config, metrics_path=metrics)
    if not os.path.exists(metrics):
        with open(metrics, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(("iter", "loss", "lr", "eval_metric"))
    return result


def cmd_fit_density(args) -> int:
    if args.data not in DATASETS:
        raise UsageError(f"unknown dataset {args.data!r}; valid kinds: {', '.join(DATASETS)}")
    config = _train_config(args, "mle", args.data, args.out)
    metrics = _prepare_out(args.out)
    result = _run_training(config, metrics, args.out)
    if args.iters > 0:
        pts = grid_points(*args.grid_range, *args.grid_range, args.grid_res)
        write_grid(os.path.join(args.out, "grid.csv"), pts, data_log_density(result.checkpoint.stack(), pts))
    return EXIT_OK


def cmd_match_energy(args) -> int:
    if args.target not in ENERGIES:
        raise UsageError(f"unknown target {args.target!r}; valid targets: {', '.join(ENERGIES)}")
    config = _train_config(args, "match", args.target, args.out)
    metrics = _prepare_out(args.out)
    result = _run_training(config, metrics, args.out)
    if args.iters > 0:
        stack = result.checkpoint.stack()
        ys = sample(stack, np.random.default_rng([args.seed, 2]), args.samples)
        with open(os.path.join(args.out, "samples.csv"), "w", newline="") as fh:
            _write_csv(fh, ("x1", "x2"), ys)
        pts = grid_points(*args.grid_range, *args.grid_range, args.grid_res)
        write_grid(os.path.join(args.out, "grid.csv"), pts, sampler_log_density(stack, pts))
    return EXIT_OK


def cmd_eval_grid(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    pts = grid_points(args.xmin, args.xmax, args.ymin, args.ymax, args.res)
    write_grid(args.out, pts, _grid_log_density(ckpt, pts))
    return EXIT_OK


def _read_rows(path: str, d: int) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            values = [float(c) for c in row]
        except ValueError:
            if lineno == 1:  # header
                continue
            raise CheckpointError(f"{path}:{lineno}: non-numeric row {row}")
        if len(values) != d:
            raise CheckpointError(f"{path}:{lineno}: expected {d} columns, got {len(values)}")
        rows.append(values)
    return np.array(rows, dtype=np.float64).reshape(-1, d)


def cmd_invert(args) -> int:
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    ckpt = load_checkpoint(args.checkpoint)
    stack = ckpt.stack()
    y = _read_rows(args.input, stack.d)
    x = flow_inverse(stack, y, tol=args.tol)
    err = float(np.abs(stack_forward(stack, x, log_det=False).y.data - y).max()) if len(y) else 0.0
    with _output(args.out) as fh:
        _write_csv(fh, tuple(f"x{i + 1}" for i in range(stack.d)), x)
    print(f"max_round_trip_error {_fmt(err)}", file=sys.stderr)
    return EXIT_OK


def cmd_count_params(args) -> int:
    print(count_params(FlowConfig(args.d, args.k, args.layers, args.flows)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _training_flags(p: argparse.ArgumentParser):
    p.add_argument("--k", type=int, default=25, help="hidden units per input dimension")
    p.add_argument("--layers", type=int, default=2, help="hidden layers per flow")
    p.add_argument("--flows", type=int, default=1, help="number of stacked flows")
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--patience", type=int, default=2000, help="iterations without improvement before decay")
    p.add_argument("--polyak", type=float, default=0.0, help="EMA coefficient for evaluation weights (0 disables)")
    p.add_argument("--eval-interval", type=int, default=100)
    p.add_argument("--checkpoint-interval", type=int, default=1000)
    p.add_argument("--grid-res", type=int, default=100)
    p.add_argument("--grid-range", type=float, nargs=2, default=(-4.0, 4.0), metavar=("LO", "HI"))
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnaf", description="Block neural autoregressive flows on 2D problems.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-density", help="maximum-likelihood fit to a toy dataset")
    p.add_argument("--data", required=True, help=f"one of {', '.join(DATASETS)}")
    _training_flags(p)
    p.set_defaults(func=cmd_fit_density)

    p = sub.add_parser("match-energy", help="reverse-KL fit to a 2D energy")
    p.add_argument("--target", required=True, help=f"one of {', '.join(ENERGIES)}")
    p.add_argument("--samples", type=int, default=10_000)
    _training_flags(p)
    p.set_defaults(func=cmd_match_energy)

    p = sub.add_parser("eval-grid", help="log-density on a lattice")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--xmin", type=float, default=-4.0)
    p.add_argument("--xmax", type=float, default=4.0)
    p.add_argument("--ymin", type=float, default=-4.0)
    p.add_argument("--ymax", type=float, default=4.0)
    p.add_argument("--res", type=int, default=100)
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=cmd_eval_grid)

    p = sub.add_parser("invert", help="numerically invert the flow on given rows")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True, help="CSV of y rows")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("count-params", help="number of trainable scalars")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--flows", type=int, default=1)
    p.set_defaults(func=cmd_count_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"bnaf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"bnaf {args.command}: {exc}; failing rows: {exc.rows}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NumericalError, RangeError) as exc:
        print(f"bnaf {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, OSError) as exc:
        print(f"bnaf {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
