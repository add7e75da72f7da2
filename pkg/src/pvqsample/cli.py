"""Command-line interface.

    pvqsample sample     --input X.csv [--schema S] (--target-size N | --shards L) --out DIR
    pvqsample baseline   --input X.csv [--schema S] --size N --out DIR
    pvqsample experiment --input TRAIN.csv --test TEST.csv [--schema S] --target-size N --out DIR
    pvqsample coverage   --input SAMPLE.csv [--reference LABELS.txt]
    pvqsample synth      --rows N --out X.csv

Without ``--schema`` an input must have a header row; a column named
``label`` holds the labels and every other column is numeric.

Exit status: 0 success, 2 usage or invalid argument, 3 unreadable or
malformed input, 4 any other runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import InvalidArgument, PVQError, RandomSource
from .evaluation import (
    ExperimentConfig,
    class_coverage,
    random_sample,
    run_experiment,
    write_runs_csv,
    write_summary_json,
    write_timings_csv,
)
from .ingest import (
    ParseError,
    apply_scaler,
    fit_scaler,
    infer_schema,
    load_delimited,
    load_label_map,
    load_schema,
    read_labels_column,
    write_sample_csv,
)
from .pvq import available_workers, choose_shard_count, estimated_size, pvq
from .som import TrainSchedule
from .synthetic import imbalanced_blobs

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("pvqsample")


def _schema(args, path):
    return load_schema(args.schema) if args.schema else infer_schema(path)


def _load(args, path):
    schema = _schema(args, path)
    data, labels = load_delimited(path, schema)
    return schema, data, labels


def _schedule(args) -> TrainSchedule:
    return TrainSchedule(rough_epochs=args.rough_epochs, fine_epochs=args.fine_epochs)


def _metadata(args, **extra) -> dict:
    params = {k: v for k, v in vars(args).items() if k != "func"}
    return {
        "tool": "pvqsample",
        "version": __version__,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "rng_algorithm": RandomSource.ALGORITHM,
        "parameters": params,
        **extra,
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(out: Path, fmt: str, stem: str, data, result, labels, names) -> Path:
    if fmt == "csv":
        path = out / f"{stem}.csv"
        write_sample_csv(path, data, result, labels, names)
        return path
    pos = data.positions_of(result.rows)
    shard = result.shard_of()
    rows = []
    for i, p in enumerate(pos.tolist()):
        row = {"row_id": int(data.row_ids[p]), "shard": int(shard[i]),
               "values": data.values[p].tolist()}
        if labels is not None:
            row["label"] = str(labels[p])
        rows.append(row)
    path = out / f"{stem}.json"
    _write_json(path, {"columns": names, "rows": rows})
    return path


def cmd_sample(args) -> int:
    schema, data, labels = _load(args, args.input)
    if args.shards is None and args.target_size is None:
        raise InvalidArgument("give --target-size or --shards")
    L = args.shards if args.shards is not None else choose_shard_count(data.n, args.target_size)
    scaled = apply_scaler(data, fit_scaler(data)) if args.standardize else data
    workers = args.workers or available_workers()
    t0 = time.perf_counter()
    result = pvq(scaled, L, _schedule(args), RandomSource(args.seed), workers)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _write_rows(out, args.format, "sample", data, result, labels, schema.feature_names)
    stats = {
        "metadata": _metadata(args, workers=workers, standardized=args.standardize),
        "realized_size": len(result),
        "size_bound": result.size_bound,
        "estimated_size": estimated_size(data.n, L),
        "shards": L,
        "input_rows": data.n,
        "non_empty_cells": [s.non_empty_cells for s in result.shards],
        "classes_covered": None if labels is None else class_coverage(labels[data.positions_of(result.rows)]),
        "wall_clock_seconds": elapsed,
        "result": result.to_dict(),
    }
    _write_json(out / "stats.json", stats)
    print(f"sampled {len(result)} of {data.n} rows (L={L}, bound {result.size_bound}) -> {path}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    schema, data, labels = _load(args, args.input)
    t0 = time.perf_counter()
    result = random_sample(data, args.size, RandomSource(args.seed))
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _write_rows(out, args.format, "baseline", data, result, labels, schema.feature_names)
    _write_json(out / "stats.json", {
        "metadata": _metadata(args),
        "realized_size": len(result),
        "input_rows": data.n,
        "classes_covered": None if labels is None else class_coverage(labels[data.positions_of(result.rows)]),
        "wall_clock_seconds": elapsed,
        "result": result.to_dict(),
    })
    print(f"sampled {len(result)} of {data.n} rows at random -> {path}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    _, train, train_labels = _load(args, args.input)
    _, test, test_labels = _load(args, args.test)
    if train_labels is None or test_labels is None:
        raise InvalidArgument("experiment inputs need a label column")
    if args.labels_5 and args.label_map:
        raise InvalidArgument("--labels-5 and --label-map are exclusive")
    label_map = None
    if args.labels_5:
        label_map = load_label_map("kddcup-5")
    elif args.label_map:
        label_map = load_label_map(args.label_map)
    if args.target_size is None and args.shards is None:
        raise InvalidArgument("give --target-size or --shards")
    target = args.target_size
    if target is None:
        target = int(round(estimated_size(train.n, args.shards)))
    config = ExperimentConfig(
        sample_size=min(target, train.n), repetitions=args.reps, seed=args.seed, k=args.k,
        test_size=args.test_size, shards=args.shards, label_map=label_map,
        schedule=_schedule(args), workers=args.workers or available_workers(),
    )
    records, summary = run_experiment(config, train, train_labels, test, test_labels)
    summary["metadata"]["cli"] = _metadata(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_runs_csv(out / "runs.csv", records)
    write_timings_csv(out / "timings.csv", records)
    write_summary_json(out / "summary.json", summary)
    for name, s in summary["samplers"].items():
        print(f"{name:>6}: median coverage {s['classes_covered']['median']:g}, "
              f"macro recall {s['macro_recall']['median']:.4f}, mcc {s['mcc']['median']:.4f}")
    return EXIT_OK


def cmd_coverage(args) -> int:
    labels = read_labels_column(args.input, args.label_column)
    found = sorted(set(labels.tolist()))
    report: dict = {"input": str(args.input), "rows": int(labels.size), "coverage": class_coverage(labels),
                    "labels": found}
    if args.reference:
        reference = [ln.strip() for ln in Path(args.reference).read_text().splitlines() if ln.strip()]
        ref = sorted(set(reference))
        if not ref:
            raise ParseError(f"{args.reference}: empty reference list")
        covered = [x for x in ref if x in set(found)]
        report.update({
            "reference_size": len(ref),
            "covered": len(covered),
            "missing": [x for x in ref if x not in set(found)],
            "extra": [x for x in found if x not in set(ref)],
            "report": f"{len(covered)}/{len(ref)}",
        })
        print(f"coverage: {len(covered)}/{len(ref)}")
    else:
        print(f"coverage: {report['coverage']}")
    if args.out:
        _write_json(Path(args.out), report)
    return EXIT_OK


def cmd_synth(args) -> int:
    values, labels, counts = imbalanced_blobs(
        args.rows, args.classes, args.dim, args.smallest, args.separation, args.seed, args.sample_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(args.dim)] + ["label"])
        for row, lab in zip(values.tolist(), labels.tolist()):
            w.writerow([*map(repr, row), lab])
    print(f"wrote {args.rows} rows, class sizes {counts.tolist()} -> {out}")
    return EXIT_OK


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pvqsample", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", required=True, help="delimited input file")
            p.add_argument("--schema", help="schema JSON file or built-in name (kddcup)")
        p.add_argument("--seed", type=_nonneg_int, default=0)

    def sampling(p):
        p.add_argument("--target-size", type=int, help="desired sample size (sets the shard count)")
        p.add_argument("--shards", type=int, help="explicit shard count L")
        p.add_argument("--workers", type=int, default=0, help="process pool size (0: all CPUs)")
        p.add_argument("--rough-epochs", type=int, default=10)
        p.add_argument("--fine-epochs", type=int, default=10)

    p = sub.add_parser("sample", help="PVQ-sample a window")
    common(p)
    sampling(p)
    p.add_argument("--no-standardize", dest="standardize", action="store_false",
                   help="quantize raw feature units instead of z-scores")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("baseline", help="uniform random sample of a window")
    common(p)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("experiment", help="repeated PVQ vs random comparison with kNN")
    common(p)
    sampling(p)
    p.add_argument("--test", required=True, help="test window file")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--test-size", type=int, help="test rows drawn per repetition")
    p.add_argument("--labels-5", action="store_true", help="aggregate KDDCUP labels to 5 categories")
    p.add_argument("--label-map", help="label map JSON file")
    p.add_argument("--format", choices=("csv",), default="csv")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("coverage", help="count distinct labels in a sampled file")
    p.add_argument("--input", required=True, help="sampled CSV with a label column")
    p.add_argument("--reference", help="file listing the reference labels, one per line")
    p.add_argument("--label-column", default="label")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("synth", help="write a synthetic imbalanced labelled stream")
    p.add_argument("--rows", type=int, default=100_000)
    p.add_argument("--classes", type=int, default=12)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--smallest", type=int, default=10)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--seed", type=_nonneg_int, default=0, help="fixes the class means")
    p.add_argument("--sample-seed", type=_nonneg_int, help="fixes the points (default: --seed)")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidArgument as exc:
        print(f"pvqsample: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, OSError, UnicodeDecodeError) as exc:
        print(f"pvqsample: input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except PVQError as exc:
        print(f"pvqsample: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
