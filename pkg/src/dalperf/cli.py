"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 data or archive problems, 4 training/runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import DataError, format_number, load_dataset, resolve_size_levels
from .divider import render_tree
from .evaluation import (
    APPROACH_GRAMMAR,
    depth_sweep,
    format_table,
    parse_approach,
    rank_experiment,
    recommend_depth,
    run_experiment,
    split_approaches,
    write_ranking_csv,
    write_results_csv,
    write_sweep_csv,
)
from .local import KINDS, LocalModelSpec
from .pipeline import ArchiveError, DalConfig, dal_predict_many, dal_train, load_model, phase_report, save_model
from .rdnn import TrainingError

EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 2, 3, 4


class UsageError(Exception):
    pass


def _non_negative(name):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if value < 0:
            raise argparse.ArgumentTypeError(f"{name} must be ≥ 0")
        return value

    return parse


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("seed must be an integer") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _local_options(pairs: Sequence[str]) -> dict:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--local-option expects key=value, got {pair!r}")
        try:
            out[key.replace("-", "_")] = json.loads(value)
        except json.JSONDecodeError:
            out[key.replace("-", "_")] = value
    return out


def _local_spec(kind: str, options: Sequence[str]) -> LocalModelSpec:
    try:
        return LocalModelSpec(kind, overrides=_local_options(options))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _add_local(p, default="rdnn"):
    p.add_argument("--local", default=default, choices=KINDS, help="local model kind")
    p.add_argument(
        "--local-option",
        action="append",
        metavar="KEY=VALUE",
        help="override a local-model setting, e.g. epochs=300 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dalperf", description="Divide-and-learn performance prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a whole CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--depth", type=_non_negative("depth"), default=1)
    _add_local(p)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--min-division-size", type=int, default=4)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="predict configurations in a CSV file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    for name, helptext in (("evaluate", "repeated-run MRE evaluation"), ("compare", "compare approaches with Scott-Knott")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--approaches", required=name == "compare", default="dal(1,rdnn)", help=APPROACH_GRAMMAR)
        p.add_argument("--sizes", type=_int_list, help="explicit training sizes (required for mixed systems)")
        p.add_argument("--levels", type=_int_list, help="subset of size levels to run, e.g. 1,5")
        p.add_argument("--repeats", type=int, default=30)
        p.add_argument("--seed", type=_seed, required=True)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--local-option", action="append", metavar="KIND.KEY=VALUE",
                       help="override a local-model setting for one kind, e.g. rdnn.epochs=300")
        p.add_argument("--no-timing", action="store_true", help="leave wall_seconds blank for reproducible files")
        p.add_argument("--out", required=True, help="output directory for results.csv and ranking.csv")

    p = sub.add_parser("sweep", help="MRE as a function of the division depth")
    p.add_argument("--data", required=True)
    p.add_argument("--max-depth", type=_non_negative("max-depth"), default=4)
    _add_local(p)
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect", help="print a model archive")
    p.add_argument("--model", required=True)
    return parser


# -- commands ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    print(f"seed: {args.seed}")
    spec = _local_spec(args.local, args.local_option)
    if args.min_division_size < 1:
        raise UsageError("min-division-size must be ≥ 1")
    dataset = load_dataset(args.data)
    config = DalConfig(args.depth, spec, args.min_division_size, args.seed, jobs=args.jobs)
    model = dal_train(dataset, config)
    save_model(model, args.out)
    print(f"trained on {len(dataset)} rows, depth {args.depth}, local model {args.local}")
    print(f"{len(model.divisions)} divisions: " + ", ".join(f"#{d.division_id}={d.size}" for d in model.divisions))
    div, tr, pr = phase_report(model)
    print(f"timings (s): dividing={div:.4f} training={tr:.4f} predicting={pr:.4f}")
    print(f"model written to {args.out}")
    return 0


def _read_prediction_input(path: str, names: list[str]) -> np.ndarray:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) not in (len(names), len(names) + 1):
        raise DataError(f"{path}: expected {len(names)} option columns (plus optional performance), got {len(header)}")
    for j, name in enumerate(names):
        if header[j] != name:
            raise DataError(f"{path}: column {j + 1} is {header[j]!r}, model expects {name!r}")
    X = np.empty((len(rows) - 1, len(names)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2}: expected {len(header)} cells, got {len(row)}")
        for j in range(len(names)):
            try:
                X[i, j] = float(row[j])
            except ValueError:
                raise DataError(f"{path}: row {i + 2}, column {names[j]!r}: non-numeric cell {row[j]!r}") from None
    return X


def cmd_predict(args) -> int:
    model = load_model(args.model)
    X = _read_prediction_input(args.input, model.option_names)
    assigned, pred = dal_predict_many(model, X)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(model.option_names + ["assigned_division", "predicted_performance"])
        for x, d, p in zip(X, assigned, pred):
            w.writerow([format_number(float(v)) for v in x] + [int(d), repr(float(p))])
    print(f"{len(X)} predictions written to {args.out}")
    return 0


def _kind_options(pairs: Optional[Sequence[str]]) -> dict:
    out: dict = {}
    for pair in pairs or ():
        head, sep, value = pair.partition("=")
        kind, dot, key = head.partition(".")
        if not (sep and dot) or kind not in KINDS:
            raise UsageError(f"--local-option expects KIND.KEY=VALUE with KIND in {KINDS}, got {pair!r}")
        out.setdefault(kind, {}).update(_local_options([f"{key}={value}"]))
    return out


def cmd_compare(args) -> int:
    print(f"seed: {args.seed}")
    overrides = _kind_options(args.local_option)
    try:
        approaches = [parse_approach(a, overrides) for a in split_approaches(args.approaches)]
    except ValueError as exc:
        raise UsageError(f"{exc}") from None
    if not approaches:
        raise UsageError(f"no approaches given; expected {APPROACH_GRAMMAR}")
    if len({a.name for a in approaches}) != len(approaches):
        raise UsageError("duplicate approach in --approaches")
    if args.repeats < 1:
        raise UsageError("repeats must be ≥ 1")
    dataset = load_dataset(args.data)
    sizes = resolve_size_levels(dataset, args.sizes)
    if args.levels:
        wanted = set(args.levels)
        unknown = wanted - {s.level for s in sizes}
        if unknown:
            raise UsageError(f"unknown size levels {sorted(unknown)}")
        sizes = [s for s in sizes if s.level in wanted]
    result = run_experiment(dataset, approaches, sizes, args.repeats, args.seed, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(result, out / "results.csv", include_timing=not args.no_timing)
    if args.repeats < 2:
        print("warning: Scott-Knott ranking skipped (needs at least 2 runs per approach)")
        rankings = {}
    else:
        rankings = rank_experiment(result, seed=args.seed)
    write_ranking_csv(rankings, out / "ranking.csv")
    print(format_table(result, rankings))
    for cell in result.failures():
        print(f"error: {cell.approach} size {cell.size_level} run {cell.run}: {cell.error}")
    print(f"results written to {out / 'results.csv'} and {out / 'ranking.csv'}")
    return EXIT_RUNTIME if result.failures() and len(result.failures()) == len(result.cells) else 0


def cmd_sweep(args) -> int:
    print(f"seed: {args.seed}")
    if not 0 < args.train_fraction < 1:
        raise UsageError("train-fraction must lie in (0, 1)")
    if args.repeats < 1:
        raise UsageError("repeats must be ≥ 1")
    spec = _local_spec(args.local, args.local_option)
    dataset = load_dataset(args.data)
    sweep = depth_sweep(dataset, list(range(args.max_depth + 1)), spec, args.train_fraction, args.repeats, args.seed)
    write_sweep_csv(sweep, args.out)
    print(f"{'d':>3}  {'median MRE':>10}  {'IQR':>8}  {'min division':>12}")
    for d, p in sorted(sweep.items()):
        flag = "  (tree shallower than d in some runs)" if p.flagged else ""
        print(f"{d:>3}  {p.median_mre:>10.2f}  {p.iqr:>8.2f}  {p.mean_min_division_size:>12.1f}{flag}")
    print(f"recommended depth: d={recommend_depth(sweep)}")
    return 0


def cmd_inspect(args) -> int:
    model = load_model(args.model)
    names = model.option_names
    cfg = model.config
    print(f"options: {len(names)} ({sum(o.is_binary for o in model.schema)} binary)")
    print(f"depth d={cfg.depth}, local model {cfg.local.kind}, seed {cfg.seed}, min division size {cfg.min_division_size}")
    if len(model.divisions) == 1:
        print("1 division (global)")
    else:
        print(f"{len(model.divisions)} divisions, router with {model.router.n_trees} trees")
    print()
    sc = model.scaler
    print("tree (split thresholds and node means in original units):")
    print(render_tree(
        model.tree,
        names,
        model.divisions,
        threshold=lambda j, t: float(sc.x_min[j] + t * (sc.x_max[j] - sc.x_min[j])),
        value=lambda m: float(sc.inverse_y(np.array([m]))[0]),
    ))
    print()
    print("division  samples  source_node  local_model")
    for d in model.divisions:
        print(f"{d.division_id:>8}  {d.size:>7}  {d.source_node:>11}  {model.local_models[d.division_id].kind}")
    div, tr, pr = phase_report(model)
    print()
    print(f"timings (s): dividing={div:.4f} training={tr:.4f} predicting={pr:.4f}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_compare,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "inspect": cmd_inspect,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dalperf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ArchiveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
