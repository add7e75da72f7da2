"""Multi-class scores computed from a confusion matrix.

Layout convention: ``counts[p, t]`` is the number of instances predicted as
class ``p`` whose true class is ``t`` (rows predicted, columns actual). The
label universe is explicit, so classes seen only in the test window still get
a column and are scored instead of being silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidArgument, as_labels

# Balanced accuracy is reported as the mean per-class recall over classes
# present in the truth; recorded in every report that carries the metric.
BALANCED_ACCURACY_DEFINITION = "macro_recall"


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        k = len(self.labels)
        if counts.shape != (k, k):
            raise InvalidArgument(f"counts shape {counts.shape} does not match {k} labels")
        if (counts < 0).any():
            raise InvalidArgument("counts must be non-negative")
        if len(set(self.labels)) != k:
            raise InvalidArgument("label universe has duplicates")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def predicted_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def true_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def per_class_recall(self) -> np.ndarray:
        """Recall per class; NaN for classes with no true instance."""
        t = self.true_counts
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(t > 0, np.diag(self.counts) / t, np.nan)

    def per_class_precision(self) -> np.ndarray:
        """Precision per class; 0 for classes never predicted."""
        p = self.predicted_counts
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(p > 0, np.diag(self.counts) / np.maximum(p, 1), 0.0)


def label_universe(*label_sets) -> tuple[str, ...]:
    """Sorted union of every label in the given vectors."""
    found: set[str] = set()
    for labels in label_sets:
        found.update(as_labels(labels).tolist())
    return tuple(sorted(found))


def confusion(truth, pred, universe=None) -> ConfusionMatrix:
    """Tally ``pred`` against ``truth`` over ``universe``.

    A label outside the universe is an error: extra test-set classes must be
    declared, not dropped.
    """
    truth = as_labels(truth)
    pred = as_labels(pred, truth.shape[0])
    universe = label_universe(truth, pred) if universe is None else tuple(str(x) for x in universe)
    index = {lab: i for i, lab in enumerate(universe)}
    try:
        t = np.fromiter((index[x] for x in truth.tolist()), dtype=np.int64, count=truth.size)
        p = np.fromiter((index[x] for x in pred.tolist()), dtype=np.int64, count=pred.size)
    except KeyError as exc:
        raise InvalidArgument(f"label {exc.args[0]!r} is not in the label universe") from None
    k = len(universe)
    counts = np.bincount(p * k + t, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, universe)


def _require_instances(m: ConfusionMatrix) -> None:
    if m.total < 1:
        raise InvalidArgument("confusion matrix is empty")


def accuracy(m: ConfusionMatrix) -> float:
    """Fraction of instances on the diagonal."""
    _require_instances(m)
    return float(np.trace(m.counts) / m.total)


def macro_recall(m: ConfusionMatrix) -> float:
    """Unweighted mean recall over classes with at least one true instance."""
    _require_instances(m)
    r = m.per_class_recall()
    populated = ~np.isnan(r)
    if not populated.any():
        raise InvalidArgument("no class has a true instance")
    return float(r[populated].mean())


def weighted_precision(m: ConfusionMatrix) -> float:
    """Per-class precision weighted by each class's share of the truth."""
    _require_instances(m)
    w = m.true_counts / m.total
    return float(np.sum(w * m.per_class_precision()))


def balanced_accuracy(m: ConfusionMatrix) -> float:
    """Alias of :func:`macro_recall`."""
    return macro_recall(m)


def mcc_multiclass(m: ConfusionMatrix) -> float:
    """Gorodkin's generalized Matthews correlation R_K.

        (c*s - sum_k p_k t_k) / sqrt((s^2 - sum_k p_k^2) (s^2 - sum_k t_k^2))

    with c the trace, s the total, p_k predicted and t_k true counts.
    Returns 0 when either factor under the root is zero.
    """
    _require_instances(m)
    # python ints: exact for any realistic count
    p = [int(v) for v in m.predicted_counts]
    t = [int(v) for v in m.true_counts]
    c = int(np.trace(m.counts))
    s = m.total
    cov_pt = c * s - sum(a * b for a, b in zip(p, t))
    cov_pp = s * s - sum(a * a for a in p)
    cov_tt = s * s - sum(b * b for b in t)
    if cov_pp == 0 or cov_tt == 0:
        return 0.0
    return float(cov_pt / np.sqrt(float(cov_pp) * float(cov_tt)))


def all_metrics(m: ConfusionMatrix) -> dict[str, float]:
    return {
        "accuracy": accuracy(m),
        "macro_recall": macro_recall(m),
        "weighted_precision": weighted_precision(m),
        "balanced_accuracy": balanced_accuracy(m),
        "mcc": mcc_multiclass(m),
    }
