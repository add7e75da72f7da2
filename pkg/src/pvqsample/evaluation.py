"""Sampler comparison harness: random baseline, reference kNN, and the
repeated paired-seed experiment that scores classifiers trained on PVQ and
on random samples of the same window."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .core import DataMatrix, InvalidArgument, RandomSource, as_labels, check_positive_int
from .ingest import LabelMap, Scaler, aggregate_labels, apply_scaler, fit_scaler
from .metrics import BALANCED_ACCURACY_DEFINITION, all_metrics, confusion, label_universe
from .pvq import SampleResult, choose_shard_count, pvq
from .som import TrainSchedule

SAMPLERS = ("pvq", "random")
METRICS = ("accuracy", "macro_recall", "weighted_precision", "balanced_accuracy", "mcc")
# Test draw as a share of the test window when no size is given (10k of 311k).
DEFAULT_TEST_FRACTION = 0.032


def random_sample(data: DataMatrix, size: int, rng: RandomSource) -> SampleResult:
    """Uniform sample of ``size`` rows without replacement, ascending by
    position."""
    size = check_positive_int("size", size)
    if size > data.n:
        raise InvalidArgument(f"sample size {size} exceeds the {data.n} available rows")
    pos = np.sort(rng.choice(data.n, size))
    config = {"size": size, "n": data.n, "seed": rng.seed, "rng": rng.describe()}
    return SampleResult(data.row_ids[pos], "random", config)


class KNNClassifier:
    """Exact Euclidean k-nearest-neighbour majority vote.

    Training rows are stored standardized. Neighbours at equal distance are
    taken in training-row order; a tied vote goes to the lexicographically
    smallest label.
    """

    # upper bound on query x train x feature elements held at once
    _BLOCK = 1 << 21

    def __init__(self, k: int = 5):
        self.k = check_positive_int("k", k)
        self.scaler: Scaler | None = None
        self.train: np.ndarray | None = None
        self.classes: np.ndarray | None = None
        self.codes: np.ndarray | None = None

    def fit(self, train: DataMatrix, labels, scaler: Scaler | None = None) -> "KNNClassifier":
        labels = as_labels(labels, train.n)
        if self.k > train.n:
            raise InvalidArgument(f"k={self.k} exceeds the {train.n} training rows")
        self.scaler = scaler if scaler is not None else fit_scaler(train)
        self.train = apply_scaler(train, self.scaler).values
        self.classes, self.codes = np.unique(labels, return_inverse=True)
        return self

    def neighbors(self, queries: DataMatrix) -> np.ndarray:
        """Training-row positions of the k nearest neighbours, nearest first."""
        if self.train is None:
            raise InvalidArgument("classifier is not fitted")
        q = apply_scaler(queries, self.scaler).values
        t = self.train
        if q.shape[1] != t.shape[1]:
            raise InvalidArgument("query dimension does not match training data")
        step = max(1, self._BLOCK // (t.shape[0] * t.shape[1]))
        out = np.empty((q.shape[0], self.k), dtype=np.intp)
        for start in range(0, q.shape[0], step):
            qb = q[start:start + step]
            d2 = ((qb[:, None, :] - t[None, :, :]) ** 2).sum(axis=2)
            out[start:start + qb.shape[0]] = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
        return out

    def predict(self, queries: DataMatrix) -> np.ndarray:
        nn = self.codes[self.neighbors(queries)]
        nq, nc = nn.shape[0], self.classes.size
        votes = np.bincount((nn + nc * np.arange(nq)[:, None]).ravel(), minlength=nq * nc)
        # classes are sorted, so argmax's first-maximum rule picks the
        # lexicographically smallest of the tied labels
        return self.classes[votes.reshape(nq, nc).argmax(axis=1)]


def knn_fit(train: DataMatrix, labels, k: int = 5, scaler: Scaler | None = None) -> KNNClassifier:
    return KNNClassifier(k).fit(train, labels, scaler)


def knn_predict(model: KNNClassifier, queries: DataMatrix) -> np.ndarray:
    return model.predict(queries)


def class_coverage(labels) -> int:
    """Number of distinct labels in a sample."""
    if labels is None:
        raise InvalidArgument("class coverage needs labels")
    return int(np.unique(as_labels(labels)).size)


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for :func:`run_experiment`.

    ``shards`` fixes the PVQ shard count; by default it is derived from
    ``sample_size``. With ``equal_size`` the random sampler draws exactly as
    many rows as the PVQ sample of the same repetition.
    """

    samplers: tuple[str, ...] = SAMPLERS
    sample_size: int = 80_000
    repetitions: int = 50
    seed: int = 0
    k: int = 5
    test_size: int | None = None
    shards: int | None = None
    equal_size: bool = True
    label_map: LabelMap | dict | None = None
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    workers: int | None = 1

    def __post_init__(self):
        if isinstance(self.samplers, str):
            object.__setattr__(self, "samplers", (self.samplers,))
        if isinstance(self.label_map, dict):
            object.__setattr__(self, "label_map", LabelMap(dict(self.label_map), "custom"))
        bad = [s for s in self.samplers if s not in SAMPLERS]
        if bad or not self.samplers:
            raise InvalidArgument(f"samplers must be drawn from {SAMPLERS}, got {self.samplers}")
        check_positive_int("repetitions", self.repetitions)
        check_positive_int("sample_size", self.sample_size)
        check_positive_int("k", self.k)
        if self.test_size is not None:
            check_positive_int("test_size", self.test_size)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["samplers"] = list(self.samplers)
        out["schedule"] = self.schedule.to_dict()
        out["label_map"] = None if self.label_map is None else self.label_map.name
        return out


@dataclass
class RunRecord:
    seed: int
    repetition: int
    sampler: str
    sample_size: int
    classes_covered: int
    accuracy: float
    macro_recall: float
    weighted_precision: float
    balanced_accuracy: float
    mcc: float
    classifier: str = "knn"
    sample_seconds: float = 0.0
    train_seconds: float = 0.0
    score_seconds: float = 0.0


RUN_COLUMNS = ("seed", "repetition", "sampler", "classifier", "sample_size", *METRICS, "classes_covered")
TIMING_COLUMNS = ("seed", "repetition", "sampler", "sample_seconds", "train_seconds", "score_seconds")


def run_experiment(config: ExperimentConfig, train: DataMatrix, train_labels,
                   test: DataMatrix, test_labels) -> tuple[list[RunRecord], dict]:
    """Repeat sample -> fit kNN -> score for every sampler in ``config``.

    Repetition ``i`` uses seed ``config.seed + i``. The test draw depends only
    on that seed, so all samplers of a repetition are scored on the same test
    rows. A fresh sample is drawn in every repetition. Features are
    standardized with a scaler fitted on the whole training window; the label
    universe is the union of training and test window labels.
    """
    train_labels = as_labels(train_labels, train.n)
    test_labels = as_labels(test_labels, test.n)
    if config.label_map is not None:
        train_labels = aggregate_labels(train_labels, config.label_map)
        test_labels = aggregate_labels(test_labels, config.label_map)
    if config.sample_size > train.n:
        raise InvalidArgument(f"sample size {config.sample_size} exceeds {train.n} training rows")
    universe = label_universe(train_labels, test_labels)
    scaler = fit_scaler(train)
    scaled = apply_scaler(train, scaler)
    test_size = config.test_size or max(1, math.ceil(DEFAULT_TEST_FRACTION * test.n))
    test_size = min(test_size, test.n)
    L = config.shards or choose_shard_count(train.n, config.sample_size)

    records: list[RunRecord] = []
    for rep in range(config.repetitions):
        seed = config.seed + rep
        rep_rng = RandomSource(seed)
        test_pos = np.sort(rep_rng.child("test").choice(test.n, test_size))
        queries = test.take(test_pos)
        truth = test_labels[test_pos]
        pvq_size = None
        for sampler in config.samplers:
            t0 = time.perf_counter()
            if sampler == "pvq":
                result = pvq(scaled, L, config.schedule, rep_rng.child("pvq"), config.workers)
                pvq_size = len(result)
            else:
                size = pvq_size if (config.equal_size and pvq_size) else config.sample_size
                result = random_sample(train, size, rep_rng.child("random"))
            t1 = time.perf_counter()
            pos = train.positions_of(result.rows)
            model = knn_fit(train.take(pos), train_labels[pos], config.k, scaler)
            t2 = time.perf_counter()
            pred = model.predict(queries)
            scores = all_metrics(confusion(truth, pred, universe))
            t3 = time.perf_counter()
            records.append(RunRecord(
                seed=seed, repetition=rep, sampler=sampler, sample_size=len(result),
                classes_covered=class_coverage(train_labels[pos]), **scores,
                sample_seconds=t1 - t0, train_seconds=t2 - t1, score_seconds=t3 - t2,
            ))
    summary = summarize(records)
    summary["metadata"] = {
        "version": __version__,
        "config": config.to_dict(),
        "pvq_shards": L,
        "test_size": test_size,
        "train_rows": train.n,
        "test_rows": test.n,
        "train_classes": int(np.unique(train_labels).size),
        "label_universe": list(universe),
        "resample_each_repetition": True,
        "balanced_accuracy_definition": BALANCED_ACCURACY_DEFINITION,
        "rng_algorithm": RandomSource.ALGORITHM,
    }
    return records, summary


def _stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    q25, med, q75 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "mean": float(v.mean()), "q25": float(q25),
            "q75": float(q75), "iqr": float(q75 - q25)}


def summarize(records: list[RunRecord]) -> dict:
    """Median, mean and interquartile range per metric and sampler, plus
    paired PVQ-vs-random comparisons when both samplers ran."""
    by_sampler: dict[str, list[RunRecord]] = {}
    for r in records:
        by_sampler.setdefault(r.sampler, []).append(r)
    out: dict = {"samplers": {}}
    for name, recs in by_sampler.items():
        out["samplers"][name] = {
            "runs": len(recs),
            **{m: _stats([getattr(r, m) for r in recs])
               for m in (*METRICS, "classes_covered", "sample_size")},
        }
    if {"pvq", "random"} <= by_sampler.keys():
        pairs = {}
        for r in records:
            pairs.setdefault(r.repetition, {})[r.sampler] = r
        paired = [(p["pvq"], p["random"]) for p in pairs.values() if len(p) == 2]
        s = out["samplers"]
        out["paired"] = {
            "pairs": len(paired),
            "coverage_pvq_ge_random_fraction": float(np.mean([a.classes_covered >= b.classes_covered
                                                               for a, b in paired])),
            "pvq_median_coverage_ge_random":
                s["pvq"]["classes_covered"]["median"] >= s["random"]["classes_covered"]["median"],
            "pvq_median_macro_recall_gt_random":
                s["pvq"]["macro_recall"]["median"] > s["random"]["macro_recall"]["median"],
            "pvq_median_mcc_gt_random": s["pvq"]["mcc"]["median"] > s["random"]["mcc"]["median"],
        }
    return out


def write_runs_csv(path, records: list[RunRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in RUN_COLUMNS)])


def write_timings_csv(path, records: list[RunRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for r in records:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in (getattr(r, c) for c in TIMING_COLUMNS)])


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
