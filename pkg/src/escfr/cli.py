"""Command-line entry point.

Subcommands: ``generate`` (synthetic data), ``train`` (one run with
manifest, report, and checkpoint), ``eval`` (metrics for a checkpoint or a
baseline), ``sweep`` (seeded hyperparameter grid with concurrent cells),
``ot`` (inspect a transport plan between two point files), and ``bench``
(solver runtime trends).

Exit codes: 0 success, 2 input/configuration error, 3 numerical failure.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import knn_cate, knn_factual, ols_slearner
from .checkpoint import load_checkpoint, save_checkpoint
from .data import GenSpec, generate_synthetic, load_dataset_csv, save_dataset_csv, split_dataset
from .errors import (
    ConfigError,
    DataParseError,
    DataValidationError,
    EscfrError,
    NumericalFailureError,
    SchemaError,
)
from .geometry import pairwise_sqeuclidean
from .metrics import evaluate_predictions
from .ot import DiscreteMeasure, SolverConfig, sinkhorn_plan, unbalanced_sinkhorn_plan
from .training import TrainConfig, FitResult, fit

SPLIT_NAMES = ("train", "valid", "test")
SPLIT_RATIOS = (0.7, 0.15, 0.15)
METRIC_CSV_FIELDS = ("model", "config_hash", "seed", "split", "auuc", "factual_rmse", "pehe", "sqrt_pehe")


def _canonical_json_bytes(payload):
    return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _write_json(path, payload):
    Path(path).write_bytes(_canonical_json_bytes(payload))


def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def _parse_kappa(text):
    if isinstance(text, str) and text.lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _format_value(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _append_metrics_row(path, model, config_hash, seed, report):
    path = Path(path)
    exists = path.exists()
    with open(path, "a", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        if not exists:
            writer.writerow(METRIC_CSV_FIELDS)
        row = report.to_json_dict()
        writer.writerow(
            [
                model,
                config_hash,
                seed,
                row["split"],
                _format_value(row["auuc"]),
                _format_value(row["factual_rmse"]),
                "" if row["pehe"] is None else _format_value(row["pehe"]),
                "" if row["sqrt_pehe"] is None else _format_value(row["sqrt_pehe"]),
            ]
        )


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args):
    spec = GenSpec.from_json_dict(_read_json(args.spec))
    dataset = generate_synthetic(spec)
    save_dataset_csv(dataset, args.out)
    _write_json(Path(args.out).with_suffix(".spec.json"), spec.to_json_dict())
    print(f"wrote {len(dataset)} rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _evaluate_fit(result, split_name, split):
    tau_hat = result.predict_cate(split.x)
    yhat_factual = result.predict_factual(split.x, split.t)
    return evaluate_predictions(
        split_name, tau_hat, yhat_factual, split.t, split.y, split.tau
    )


def cmd_train(args):
    config = TrainConfig.from_json_dict(_read_json(args.config))
    resolved = config.to_json_dict()
    config_hash = hashlib.sha256(_canonical_json_bytes(resolved)).hexdigest()
    dataset = load_dataset_csv(args.data)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool_version": __version__,
        "dataset_path": str(args.data),
        "dataset_fingerprint": _sha256_file(args.data),
        "config": resolved,
        "config_hash": config_hash,
        "seed": config.seed,
        "split_ratios": list(SPLIT_RATIOS),
        "artifacts": {
            "checkpoint": "best.ckpt",
            "report": "report.json",
            "timings": "timings.json",
            "metrics_csv": "metrics.csv",
        },
    }
    _write_json(out_dir / "manifest.json", manifest)

    train, valid, _test = split_dataset(dataset, SPLIT_RATIOS, seed=config.seed)
    result = fit(train, valid, config)
    result.report.checkpoint_path = "best.ckpt"

    save_checkpoint(out_dir / "best.ckpt", result.params, result.y_mean, result.y_std, config_hash)
    _write_json(out_dir / "report.json", result.report.to_json_dict())
    _write_json(out_dir / "timings.json", {"epoch_seconds": result.report.epoch_seconds})
    valid_report = _evaluate_fit(result, "valid", valid)
    _append_metrics_row(
        out_dir / "metrics.csv", result.report.estimator, config_hash, config.seed, valid_report
    )
    print(
        f"estimator={result.report.estimator} best_epoch={result.report.best_epoch} "
        f"stopped_epoch={result.report.stopped_epoch} "
        f"val_{result.report.selection_metric}={result.report.best_metric}"
    )
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _resolve_eval_seed(args):
    if args.seed is not None:
        return args.seed
    if args.checkpoint:
        manifest_path = Path(args.checkpoint).parent / "manifest.json"
        if manifest_path.exists():
            return int(_read_json(manifest_path).get("seed", 0))
    return 0


def cmd_eval(args):
    if bool(args.checkpoint) == bool(args.estimator):
        raise ConfigError("pass exactly one of --checkpoint or --estimator")
    dataset = load_dataset_csv(args.data)
    seed = _resolve_eval_seed(args)
    splits = dict(zip(SPLIT_NAMES, split_dataset(dataset, SPLIT_RATIOS, seed=seed)))
    split = splits[args.split]
    train = splits["train"]

    if args.checkpoint:
        if not Path(args.checkpoint).exists():
            raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
        params, y_mean, y_std, config_hash = load_checkpoint(args.checkpoint)
        result = FitResult(params, y_mean, y_std, report=None)
        report = _evaluate_fit(result, args.split, split)
        model = "checkpoint"
    else:
        config_hash = ""
        model = args.estimator
        if args.estimator == "ols":
            fitted = ols_slearner(train, ridge=args.ridge)
            tau_hat = fitted.predict_cate(split.x)
            yhat = fitted.predict(split.x, split.t)
            print(f"treatment_coefficient={fitted.treatment_coefficient!r}")
        else:
            tau_hat = knn_cate(train, args.knn_k, split.x)
            yhat = knn_factual(train, args.knn_k, split.x, split.t)
        report = evaluate_predictions(args.split, tau_hat, yhat, split.t, split.y, split.tau)

    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    _append_metrics_row(args.results, model, config_hash, seed, report)
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

_SWEEP_FIELDS = ("lambda", "epsilon", "kappa", "gamma", "batch_size")


def _sweep_cells(grid):
    if not isinstance(grid, dict):
        raise ConfigError("grid must be a JSON object")
    known = set(_SWEEP_FIELDS) | {"seeds", "base"}
    for key in grid:
        if key not in known:
            raise ConfigError(f"unknown grid field {key!r}")
    seeds = grid.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("grid field 'seeds' must be a non-empty list")
    base = grid.get("base", {})
    swept = [(name, grid[name]) for name in _SWEEP_FIELDS if name in grid]
    for name, values in swept:
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid field {name!r} must be a non-empty list")
    cells = []
    for combo in product(*(values for _, values in swept)):
        cell = dict(zip((name for name, _ in swept), combo))
        cells.append(cell)
    return cells, [int(s) for s in seeds], base


def _cell_config(base, cell, seed):
    raw = dict(base)
    raw.update(cell)
    raw["seed"] = seed
    return TrainConfig.from_json_dict(raw)


def _run_sweep_cell(task):
    data_path, base, cell, seed = task
    key = {**cell, "seed": seed}
    try:
        config = _cell_config(base, cell, seed)
        dataset = load_dataset_csv(data_path)
        train, valid, test = split_dataset(dataset, SPLIT_RATIOS, seed=seed)
        result = fit(train, valid, config)
        row = {"status": "ok", "error": ""}
        for split_name, split in (("valid", valid), ("test", test)):
            report = _evaluate_fit(result, split_name, split)
            payload = report.to_json_dict()
            for metric in ("auuc", "factual_rmse", "pehe", "sqrt_pehe"):
                row[f"{metric}_{split_name}"] = payload[metric]
        return key, row
    except (EscfrError, np.linalg.LinAlgError, OSError) as exc:
        return key, {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def _worker_cap(requested):
    cap = os.environ.get("ESCFR_THREADS")
    workers = max(1, int(requested))
    if cap:
        workers = max(1, min(workers, int(cap)))
    return workers


def cmd_sweep(args):
    cells, seeds, base = _sweep_cells(_read_json(args.grid))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(args.data, base, cell, seed) for cell in cells for seed in seeds]
    workers = _worker_cap(args.jobs)

    if workers == 1:
        outcomes = [_run_sweep_cell(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_sweep_cell, tasks))

    metric_names = ["auuc_valid", "factual_rmse_valid", "pehe_valid", "sqrt_pehe_valid",
                    "auuc_test", "factual_rmse_test", "pehe_test", "sqrt_pehe_test"]
    run_fields = list(_SWEEP_FIELDS) + ["seed", "status", "error"] + metric_names
    with open(out_dir / "runs.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(run_fields)
        for key, row in outcomes:
            cells_part = [
                _format_value(key[name]) if name in key else "" for name in _SWEEP_FIELDS
            ]
            metrics_part = [
                "" if row.get(name) is None else _format_value(row.get(name, ""))
                for name in metric_names
            ]
            writer.writerow(cells_part + [key["seed"], row["status"], row["error"]] + metrics_part)

    # Aggregate over seeds, in grid order, independent of completion order.
    agg_fields = list(_SWEEP_FIELDS) + ["n_ok", "n_failed"]
    for name in metric_names:
        agg_fields += [f"{name}_mean", f"{name}_std"]
    with open(out_dir / "aggregate.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(agg_fields)
        for cell in cells:
            rows = [row for key, row in outcomes if all(key.get(k) == v for k, v in cell.items())]
            ok = [row for row in rows if row["status"] == "ok"]
            record = [
                _format_value(cell[name]) if name in cell else "" for name in _SWEEP_FIELDS
            ]
            record += [len(ok), len(rows) - len(ok)]
            for name in metric_names:
                values = [row[name] for row in ok if row.get(name) is not None]
                if values:
                    record += [_format_value(float(np.mean(values))), _format_value(float(np.std(values)))]
                else:
                    record += ["", ""]
            writer.writerow(record)

    n_ok = sum(1 for _, row in outcomes if row["status"] == "ok")
    print(f"sweep finished: {n_ok}/{len(outcomes)} runs succeeded")
    return 0 if n_ok else 3


# ---------------------------------------------------------------------------
# ot
# ---------------------------------------------------------------------------


def _load_points_csv(path):
    with open(path, "r", newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        rows = list(reader)
    if header != [f"x{i}" for i in range(len(header))] or not header:
        raise SchemaError(f"{path}: point files need columns x0..x{{d-1}}, got {header}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    points = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                points[i, j] = float(cell)
            except ValueError:
                raise DataParseError(
                    f"{path}: non-numeric value {cell!r} at row {i + 2}, column x{j}"
                ) from None
    return points


def cmd_ot(args):
    points_a = _load_points_csv(args.a)
    points_b = _load_points_csv(args.b)
    if points_a.shape[1] != points_b.shape[1]:
        raise SchemaError(
            f"point dimensionalities differ: {points_a.shape[1]} vs {points_b.shape[1]}"
        )
    source = DiscreteMeasure.uniform(points_a)
    target = DiscreteMeasure.uniform(points_b)
    cost = pairwise_sqeuclidean(source.points, target.points)
    config = SolverConfig(
        epsilon=args.epsilon,
        kappa=_parse_kappa(args.kappa),
        max_iters=args.max_iters,
        tol=args.tol,
    )
    plan = unbalanced_sinkhorn_plan(source.mass, target.mass, cost, config)
    mass_a, mass_b = source.mass, target.mass

    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for row in plan.coupling:
            writer.writerow([repr(float(v)) for v in row])
    residual_a = float(np.abs(plan.row_marginal - mass_a).sum())
    residual_b = float(np.abs(plan.col_marginal - mass_b).sum())
    print(f"cost={plan.cost!r}")
    print(f"row_marginal_residual_l1={residual_a!r}")
    print(f"col_marginal_residual_l1={residual_b!r}")
    print(f"converged={plan.converged} iterations={plan.iterations_used}")
    print(f"coupling written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _time_solver(solver, n, config, reps, seed):
    times = np.empty(reps)
    for rep in range(reps):
        rng = np.random.default_rng([seed, n, rep])
        cost = pairwise_sqeuclidean(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)))
        mass = np.full(n, 1.0 / n)
        started = time.perf_counter()
        solver(mass, mass, cost, config)
        times[rep] = time.perf_counter() - started
    return float(times.mean()), float(times.std())


def _check_trend(label, values, direction, band=0.10):
    ok = True
    for prev, curr in zip(values, values[1:]):
        if direction == "nondecreasing" and curr < prev * (1.0 - band):
            ok = False
        if direction == "nonincreasing" and curr > prev * (1.0 + band):
            ok = False
    print(f"trend {label}: {'ok' if ok else 'violated'}")
    return ok


def cmd_bench(args):
    sizes = [int(s) for s in args.sizes.split(",") if s]
    epsilons = [float(s) for s in args.epsilons.split(",") if s]
    kappas = [float(s) for s in args.kappas.split(",") if s]
    if any(n < 2 for n in sizes):
        raise ConfigError("sizes must all be >= 2")
    reps = args.reps
    rows = []

    def solve_balanced(a, b, cost, config):
        return sinkhorn_plan(a, b, cost, config)

    def solve_unbalanced(a, b, cost, config):
        return unbalanced_sinkhorn_plan(a, b, cost, config)

    size_times = {"sinkhorn": [], "generalized_sinkhorn": []}
    for n in sizes:
        cfg_b = SolverConfig(epsilon=1.0, max_iters=args.max_iters, tol=args.tol)
        cfg_u = SolverConfig(epsilon=1.0, kappa=1.0, max_iters=args.max_iters, tol=args.tol)
        for name, solver, cfg in (
            ("sinkhorn", solve_balanced, cfg_b),
            ("generalized_sinkhorn", solve_unbalanced, cfg_u),
        ):
            mean, std = _time_solver(solver, n, cfg, reps, seed=args.seed)
            rows.append(("n", name, n, mean, std))
            size_times[name].append(mean)

    eps_times = {"sinkhorn": [], "generalized_sinkhorn": []}
    for eps in epsilons:
        cfg_b = SolverConfig(epsilon=eps, max_iters=args.max_iters, tol=args.tol)
        cfg_u = SolverConfig(epsilon=eps, kappa=1.0, max_iters=args.max_iters, tol=args.tol)
        for name, solver, cfg in (
            ("sinkhorn", solve_balanced, cfg_b),
            ("generalized_sinkhorn", solve_unbalanced, cfg_u),
        ):
            mean, std = _time_solver(solver, args.bench_n, cfg, reps, seed=args.seed + 1)
            rows.append(("epsilon", name, eps, mean, std))
            eps_times[name].append(mean)

    kappa_times = []
    for kappa in kappas:
        cfg = SolverConfig(epsilon=1.0, kappa=kappa, max_iters=args.max_iters, tol=args.tol)
        mean, std = _time_solver(solve_unbalanced, args.bench_n, cfg, reps, seed=args.seed + 2)
        rows.append(("kappa", "generalized_sinkhorn", kappa, mean, std))
        kappa_times.append(mean)

    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sweep", "algorithm", "value", "mean_seconds", "std_seconds", "reps"])
        for sweep, name, value, mean, std in rows:
            writer.writerow([sweep, name, _format_value(value), repr(mean), repr(std), reps])

    ok = True
    ok &= _check_trend("time nondecreasing in n (sinkhorn)", size_times["sinkhorn"], "nondecreasing")
    ok &= _check_trend(
        "time nondecreasing in n (generalized_sinkhorn)",
        size_times["generalized_sinkhorn"],
        "nondecreasing",
    )
    ok &= _check_trend("time decreasing in epsilon (sinkhorn)", eps_times["sinkhorn"], "nonincreasing")
    ok &= _check_trend("time increasing in kappa (generalized_sinkhorn)", kappa_times, "nondecreasing")
    print(f"benchmark written to {args.out}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="escfr",
        description="Counterfactual regression with relaxed optimal transport.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset CSV")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--out", required=True, help="output dataset CSV")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model and save its artifacts")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--config", required=True, help="train config JSON")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or baseline on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--estimator", choices=("ols", "knn"), default=None)
    p.add_argument("--split", choices=SPLIT_NAMES, default="test")
    p.add_argument("--seed", type=int, default=None, help="split seed (default: run manifest, else 0)")
    p.add_argument("--results", default="metrics.csv", help="CSV to append the metric row to")
    p.add_argument("--knn-k", type=int, default=5)
    p.add_argument("--ridge", type=float, default=1e-6)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a hyperparameter grid")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="grid JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs (capped by ESCFR_THREADS)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ot", help="solve one transport problem between two point files")
    p.add_argument("--a", required=True, help="CSV of source points (columns x0..)")
    p.add_argument("--b", required=True, help="CSV of target points")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--kappa", default="inf", help="marginal relaxation strength, or 'inf'")
    p.add_argument("--out", default="coupling.csv")
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-7)
    p.set_defaults(func=cmd_ot)

    p = sub.add_parser("bench", help="time the solvers and check runtime trends")
    p.add_argument("--sizes", default="32,64,128,256")
    p.add_argument("--epsilons", default="0.1,0.5,1.0,5.0,10.0,100.0")
    p.add_argument("--kappas", default="0.1,0.5,1.0,5.0,10.0,100.0")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--bench-n", type=int, default=64, help="instance size for the eps/kappa sweeps")
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (EscfrError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
