"""Batch self-organizing map on a rectangular lattice.

Centroids live in whatever space the caller trains in (standardized features
in the pipelines of this package). Training is the classic batch rule: every
epoch assigns each row to its best-matching unit (BMU) and replaces every
centroid by the neighborhood-weighted mean of the rows,

    c_j = sum_i h(b(i), j) x_i / sum_i h(b(i), j),

with a Gaussian kernel ``h`` over grid distance. At radius 0 the kernel is the
indicator of the BMU and one epoch is exactly one Lloyd (k-means) update.

All reductions run in a fixed row order on a single thread, so a codebook is a
bitwise function of its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DataMatrix, InvalidArgument, RandomSource

# Rows scored per block when computing row-to-centroid distances.
_CHUNK = 256
# Kernel weights below this are dropped, so a kernel mass is either exactly
# zero or large enough for the weighted mean to be well conditioned.
_KERNEL_FLOOR = 1e-150


def codebook_size(n_rows: int) -> int:
    """Number of map units for ``n_rows`` observations: ceil(5 * sqrt(n)).

    Evaluated in integer arithmetic: the smallest m with m**2 >= 25 * n.
    """
    if isinstance(n_rows, bool) or int(n_rows) != n_rows or n_rows < 1:
        raise InvalidArgument(f"n_rows must be a positive integer, got {n_rows!r}")
    return math.isqrt(25 * int(n_rows) - 1) + 1


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SomTopology:
    """Rectangular lattice holding exactly ``m`` units; unit ``j`` sits at
    ``(j // cols, j % cols)``, so only the last of the ``rows`` rows may be
    partly filled."""

    m: int
    rows: int
    cols: int

    def __post_init__(self):
        if self.m < 1 or self.rows < 1 or self.cols < 1:
            raise InvalidArgument("topology sizes must be >= 1")
        if not (self.rows - 1) * self.cols < self.m <= self.rows * self.cols:
            raise InvalidArgument(f"{self.m} units do not fill a {self.rows}x{self.cols} grid")

    @property
    def n_units(self) -> int:
        return self.m

    def positions(self) -> np.ndarray:
        j = np.arange(self.n_units)
        return np.stack([j // self.cols, j % self.cols], axis=1)

    def grid_sq_distances(self) -> np.ndarray:
        pos = self.positions().astype(np.float64)
        diff = pos[:, None, :] - pos[None, :, :]
        return (diff**2).sum(axis=2)

    def to_dict(self) -> dict:
        return {"m": self.m, "rows": self.rows, "cols": self.cols, "lattice": "rect"}


def _top_eigen(values: np.ndarray):
    """Two largest covariance eigenpairs, or None when they are unusable."""
    n, d = values.shape
    if n < 2 or d < 2:
        return None
    cov = np.cov(values, rowvar=False)
    if not np.isfinite(cov).all():
        return None
    w, v = np.linalg.eigh(cov)
    w, v = w[::-1][:2], v[:, ::-1][:, :2]
    if w[0] <= 0 or w[1] <= 1e-12 * w[0]:
        return None
    # eigh leaves eigenvector signs arbitrary; pin them so the linear
    # initialization is the same wherever it runs
    for k in range(2):
        if v[np.argmax(np.abs(v[:, k])), k] < 0:
            v[:, k] = -v[:, k]
    return w, v


def plan_topology(m: int, data: DataMatrix) -> SomTopology:
    """Grid shape for ``m`` units.

    The side ratio follows the spread of the data: rows/cols is the square
    root of the ratio of the two largest covariance eigenvalues, clamped to
    [1, 10]. Degenerate covariance (d < 2, a single row, rank < 2) gives a
    near-square grid. ``rows >= cols`` always; the map has exactly ``m``
    units, so the last row holds ``m - (rows - 1) * cols`` of them.
    """
    if m < 1:
        raise InvalidArgument("m must be >= 1")
    eig = _top_eigen(_values(data))
    aspect = 1.0 if eig is None else float(np.clip(math.sqrt(eig[0][0] / eig[0][1]), 1.0, 10.0))
    cols = max(1, _round_half_up(math.sqrt(m / aspect)))
    rows = -(-m // cols)
    if rows < cols:
        cols = rows
        rows = -(-m // cols)
    return SomTopology(m, rows, cols)


@dataclass(frozen=True, eq=False)
class Codebook:
    centroids: np.ndarray
    topology: SomTopology

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64, order="C", copy=True)
        if c.ndim != 2 or c.shape[0] != self.topology.n_units:
            raise InvalidArgument(
                f"centroid matrix {c.shape} does not match {self.topology.n_units} units"
            )
        if not np.isfinite(c).all():
            raise InvalidArgument("centroids must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def d(self) -> int:
        return self.centroids.shape[1]

    def to_dict(self) -> dict:
        return {
            "topology": self.topology.to_dict(),
            "dim": self.d,
            "centroids": self.centroids.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Codebook":
        t = obj["topology"]
        topo = SomTopology(int(t["m"]), int(t["rows"]), int(t["cols"]))
        c = np.asarray(obj["centroids"], dtype=np.float64).reshape(topo.n_units, int(obj["dim"]))
        return cls(c, topo)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrainSchedule:
    """Two-phase batch schedule; radii are in grid units and fall linearly
    from start to end over the epochs of each phase.

    ``rough_radius_start=None`` means ``max(1, max(rows, cols) / 4)`` for the
    map being trained.
    """

    rough_epochs: int = 10
    fine_epochs: int = 10
    rough_radius_start: float | None = None
    rough_radius_end: float = 1.0
    fine_radius_start: float = 1.0
    fine_radius_end: float = 0.0

    def __post_init__(self):
        if self.rough_epochs < 1 or self.fine_epochs < 1:
            raise InvalidArgument("each phase needs at least one epoch")
        for start, end in (
            (self.rough_radius_start, self.rough_radius_end),
            (self.fine_radius_start, self.fine_radius_end),
        ):
            if end < 0 or (start is not None and start < end):
                raise InvalidArgument("radii must satisfy start >= end >= 0")

    @classmethod
    def lloyd(cls, epochs: int = 10) -> "TrainSchedule":
        """Radius 0 throughout: plain k-means iterations from the SOM init."""
        return cls(1, max(1, epochs - 1), 0.0, 0.0, 0.0, 0.0)

    def radii(self, topology: SomTopology) -> np.ndarray:
        start = self.rough_radius_start
        if start is None:
            start = max(self.rough_radius_end, 1.0, max(topology.rows, topology.cols) / 4.0)
        return np.concatenate([
            np.linspace(start, self.rough_radius_end, self.rough_epochs),
            np.linspace(self.fine_radius_start, self.fine_radius_end, self.fine_epochs),
        ])

    def to_dict(self) -> dict:
        return {
            "rough_epochs": self.rough_epochs,
            "fine_epochs": self.fine_epochs,
            "rough_radius_start": "auto" if self.rough_radius_start is None else self.rough_radius_start,
            "rough_radius_end": self.rough_radius_end,
            "fine_radius_start": self.fine_radius_start,
            "fine_radius_end": self.fine_radius_end,
            "kernel": "gaussian",
            "lattice": "rect",
        }


@dataclass(frozen=True, eq=False)
class VoronoiMapping:
    bmu: np.ndarray
    distance: np.ndarray

    def hits(self, n_units: int) -> np.ndarray:
        return np.bincount(self.bmu, minlength=n_units)


def _values(data) -> np.ndarray:
    if isinstance(data, DataMatrix):
        return data.values
    values = np.asarray(data, dtype=np.float64)
    if values.ndim != 2:
        raise InvalidArgument("expected a 2-D matrix")
    return values


def init_codebook(data: DataMatrix, topology: SomTopology, rng: RandomSource) -> Codebook:
    """Linear initialization over the top two principal components.

    Units are spread on a regular lattice covering +-2 standard deviations
    along PC1 (grid rows) and PC2 (grid columns), centred on the mean. If the
    data has fewer than two usable components, centroids are random rows
    instead (drawn with replacement only when there are more units than rows).
    A 1x1 map always starts at the mean.
    """
    x = _values(data)
    n, d = x.shape
    mean = x.mean(axis=0)
    if topology.n_units == 1:
        return Codebook(mean[None, :], topology)
    eig = _top_eigen(x)
    if eig is None:
        k = topology.n_units
        idx = rng.choice(n, k, replace=k > n)
        return Codebook(x[idx], topology)
    w, v = eig
    sd = np.sqrt(w)

    def axis(count):
        return np.linspace(-2.0, 2.0, count) if count > 1 else np.zeros(1)

    pos = topology.positions()
    a = axis(topology.rows)[pos[:, 0]]
    b = axis(topology.cols)[pos[:, 1]]
    centroids = mean + np.outer(a * sd[0], v[:, 0]) + np.outer(b * sd[1], v[:, 1])
    return Codebook(centroids, topology)


def _nearest(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid for every row; ties go to the lowest index.

    Candidates come from the fast ``|c|^2 - 2 x.c`` expansion. Any row whose
    runner-up lies within the expansion's rounding error of the minimum is
    re-ranked with directly computed squared differences, so the answer is
    that of an exhaustive exact search.
    """
    n = x.shape[0]
    cc = np.einsum("ij,ij->i", c, c)
    cc_max = float(cc.max())
    ct = np.ascontiguousarray(c.T)
    out = np.empty(n, dtype=np.intp)
    for start in range(0, n, _CHUNK):
        xb = x[start:start + _CHUNK]
        r = np.arange(xb.shape[0])
        d2 = xb @ ct
        d2 *= -2.0
        d2 += cc
        j = np.argmin(d2, axis=1)
        best = d2[r, j]
        d2[r, j] = np.inf
        tol = 1e-9 * (np.einsum("ij,ij->i", xb, xb) + cc_max) + 1e-300
        ambiguous = np.flatnonzero(d2.min(axis=1) <= best + tol)
        if ambiguous.size:
            d2[ambiguous, j[ambiguous]] = best[ambiguous]
            rows, k = np.nonzero(d2[ambiguous] <= (best[ambiguous] + tol[ambiguous])[:, None])
            rows = ambiguous[rows]
            exact = ((xb[rows] - c[k]) ** 2).sum(axis=1)
            order = np.lexsort((k, exact, rows))
            first = np.ones(order.size, dtype=bool)
            first[1:] = rows[order][1:] != rows[order][:-1]
            j[rows[order][first]] = k[order][first]
        out[start:start + xb.shape[0]] = j
    return out


def map_to_bmu(data: DataMatrix, codebook: Codebook) -> VoronoiMapping:
    """Exact Euclidean best-matching unit per row (lowest index on ties)."""
    x = _values(data)
    c = codebook.centroids
    if x.shape[1] != c.shape[1]:
        raise InvalidArgument(f"data has {x.shape[1]} features, codebook {c.shape[1]}")
    bmu = _nearest(x, c)
    dist = np.sqrt(((x - c[bmu]) ** 2).sum(axis=1))
    return VoronoiMapping(bmu, dist)


def quantization_error(data: DataMatrix, codebook: Codebook) -> float:
    """Mean squared distance from each row to its BMU."""
    return float(np.mean(map_to_bmu(data, codebook).distance ** 2))


def _kernel(grid_sq: np.ndarray, radius: float) -> np.ndarray | None:
    if radius <= 0:
        return None
    h = np.exp(-grid_sq / (2.0 * radius * radius))
    h[h < _KERNEL_FLOOR] = 0.0
    return h


def batch_epoch(x: np.ndarray, centroids: np.ndarray, grid_sq: np.ndarray, radius: float) -> np.ndarray:
    """One batch update; returns new centroids (input left untouched)."""
    m, d = centroids.shape
    bmu = _nearest(x, centroids)
    hits = np.bincount(bmu, minlength=m).astype(np.float64)
    sums = np.zeros((m, d))
    np.add.at(sums, bmu, x)  # unbuffered, applied in row order
    h = _kernel(grid_sq, radius)
    if h is None:
        num, mass = sums, hits
    else:
        num, mass = h @ sums, h @ hits
    out = centroids.copy()
    live = mass > 0
    out[live] = num[live] / mass[live, None]
    return out


def batch_train(data: DataMatrix, codebook: Codebook, schedule: TrainSchedule | None = None) -> Codebook:
    """Train ``codebook`` on ``data`` with the batch SOM rule."""
    x = _values(data)
    if x.shape[1] != codebook.d:
        raise InvalidArgument(f"data has {x.shape[1]} features, codebook {codebook.d}")
    if not np.isfinite(x).all():
        raise InvalidArgument("training data contains NaN or infinite values")
    schedule = schedule or TrainSchedule()
    grid_sq = codebook.topology.grid_sq_distances()
    c = np.array(codebook.centroids)
    previous = None
    for radius in schedule.radii(codebook.topology):
        radius = float(radius)
        # an epoch is a pure function of (centroids, radius): once one leaves
        # the centroids unchanged, repeating it at the same radius is a no-op
        if radius == previous and stable:
            continue
        updated = batch_epoch(x, c, grid_sq, radius)
        stable = np.array_equal(updated, c)
        c, previous = updated, radius
    return Codebook(c, codebook.topology)


def train_som(data: DataMatrix, rng: RandomSource, schedule: TrainSchedule | None = None,
              m: int | None = None) -> Codebook:
    """Size, shape, initialize and train a map for ``data`` in one call."""
    x = _values(data)
    m = codebook_size(x.shape[0]) if m is None else m
    topology = plan_topology(m, x)
    return batch_train(x, init_codebook(x, topology, rng), schedule)
