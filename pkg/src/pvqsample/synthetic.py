"""Synthetic imbalanced streams: well-separated Gaussian blobs whose class
sizes fall geometrically from the majority class down to a handful of rows."""

from __future__ import annotations

import numpy as np

from .core import InvalidArgument, RandomSource


def geometric_counts(n: int, n_classes: int, smallest: int) -> np.ndarray:
    """Class sizes ``smallest * q**i`` (i = 0..K-1) summing to ``n``.

    The ratio ``q`` is found by bisection; rounding slack goes to the largest
    class. Returned largest first.
    """
    if n_classes < 1 or smallest < 1 or n < smallest * n_classes:
        raise InvalidArgument("need n >= smallest * n_classes")
    if n_classes == 1:
        return np.array([n])

    def total(q):
        return smallest * np.sum(q ** np.arange(n_classes))

    lo, hi = 1.0, 2.0
    while total(hi) < n:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if total(mid) < n else (lo, mid)
    counts = np.maximum(smallest, np.floor(smallest * lo ** np.arange(n_classes))).astype(np.int64)
    counts[-1] += n - counts.sum()
    return counts[::-1].copy()


def imbalanced_blobs(n: int = 100_000, n_classes: int = 12, d: int = 8, smallest: int = 10,
                     separation: float = 10.0, seed: int = 0, sample_seed: int | None = None):
    """Labelled blobs with unit-variance classes whose means are at least
    ``separation`` apart.

    ``seed`` fixes the class means; ``sample_seed`` (default: ``seed``) fixes
    the points, so a test window from the same distribution is the same call
    with another ``sample_seed``. Returns ``(values, labels, counts)``; rows
    are shuffled so that classes are interleaved the way a stream would
    deliver them. Labels are ``c00``, ``c01``, ... with ``c00`` the majority
    class.
    """
    counts = geometric_counts(n, n_classes, smallest)
    means_gen = RandomSource(seed).child("synthetic-means").generator()
    box = separation * max(1.0, n_classes ** (1.0 / d))
    means: list[np.ndarray] = []
    while len(means) < n_classes:
        cand = means_gen.uniform(-box, box, size=d)
        if all(np.linalg.norm(cand - mu) >= separation for mu in means):
            means.append(cand)
    gen = RandomSource(seed if sample_seed is None else sample_seed).child("synthetic-points").generator()
    parts = [gen.standard_normal((c, d)) + means[k] for k, c in enumerate(counts)]
    values = np.concatenate(parts)
    labels = np.concatenate([np.full(c, f"c{k:02d}") for k, c in enumerate(counts)])
    order = gen.permutation(n)
    return values[order], labels[order], counts
