"""Shared data types and the seeded randomness contract.

Every stochastic decision in the package draws from a :class:`RandomSource`.
A source is an immutable node in a tree of streams: ``child()`` derives a new,
independent node from a key path, so concurrent workers never share state and
results do not depend on scheduling.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np


class PVQError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgument(PVQError, ValueError):
    """A caller supplied an argument outside the documented domain."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Dense, finite, row-indexed observation matrix.

    ``row_ids`` are stable identifiers of the original rows; they survive
    slicing so samples can always be traced back to the source window.
    """

    values: np.ndarray
    row_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if values.ndim != 2:
            raise InvalidArgument(f"expected a 2-D matrix, got shape {values.shape}")
        n, d = values.shape
        if n < 1 or d < 1:
            raise InvalidArgument(f"matrix must have n >= 1 and d >= 1, got {values.shape}")
        if not np.isfinite(values).all():
            raise InvalidArgument("matrix contains NaN or infinite values")
        if self.row_ids is None:
            row_ids = np.arange(n, dtype=np.int64)
        else:
            row_ids = np.array(self.row_ids, dtype=np.int64, copy=True)
            if row_ids.shape != (n,):
                raise InvalidArgument(f"row_ids has shape {row_ids.shape}, expected ({n},)")
            if np.unique(row_ids).size != n:
                raise InvalidArgument("row_ids must be unique")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "row_ids", _readonly(row_ids))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n

    def take(self, positions) -> "DataMatrix":
        """Sub-matrix at the given row positions (not row ids)."""
        positions = np.asarray(positions, dtype=np.intp)
        return DataMatrix(self.values[positions], self.row_ids[positions])

    def positions_of(self, row_ids) -> np.ndarray:
        """Map row ids back to row positions; raises if an id is unknown."""
        row_ids = np.asarray(row_ids, dtype=np.int64)
        order = np.argsort(self.row_ids, kind="stable")
        sorted_ids = self.row_ids[order]
        idx = np.searchsorted(sorted_ids, row_ids)
        idx = np.clip(idx, 0, sorted_ids.size - 1)
        if row_ids.size and not np.array_equal(sorted_ids[idx], row_ids):
            raise InvalidArgument("unknown row id")
        return order[idx]


def as_labels(labels, n: int | None = None) -> np.ndarray:
    """Coerce a label sequence to a string array, checking its length."""
    out = np.asarray(labels).astype(str)
    if out.ndim != 1:
        raise InvalidArgument("labels must be one-dimensional")
    if n is not None and out.shape[0] != n:
        raise InvalidArgument(f"got {out.shape[0]} labels for {n} rows")
    return out


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise InvalidArgument("stream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


@dataclass(frozen=True)
class RandomSource:
    """Immutable seeded stream: Philox-4x64 keyed through ``SeedSequence``.

    Each node yields the same draws every time it is asked, on every platform,
    because only the raw 64-bit Philox output is consumed (no numpy
    distribution code whose stream may change across versions). Use
    :meth:`child` to get an independent stream for each distinct purpose.
    """

    seed: int
    path: tuple[int, ...] = ()

    ALGORITHM: ClassVar[str] = "philox4x64-10/seedsequence/v1"

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgument("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "path", tuple(int(k) for k in self.path))

    def child(self, *keys) -> "RandomSource":
        return RandomSource(self.seed, self.path + tuple(_key_to_int(k) for k in keys))

    def _bit_generator(self) -> np.random.Philox:
        return np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=self.path))

    def raw(self, size: int) -> np.ndarray:
        """The first ``size`` uint64 words of this stream."""
        return self._bit_generator().random_raw(size).astype(np.uint64)

    def uniform(self, size: int) -> np.ndarray:
        """Doubles in [0, 1) built from the top 53 bits of each raw word."""
        return (self.raw(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of ``range(n)`` (sort by random keys)."""
        return np.argsort(self.raw(n), kind="stable")

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        if replace:
            return (self.raw(size) % np.uint64(n)).astype(np.intp)
        if size > n:
            raise InvalidArgument(f"cannot draw {size} of {n} without replacement")
        return self.permutation(n)[:size]

    def generator(self) -> np.random.Generator:
        """A numpy Generator on this stream, for non-contractual draws
        (synthetic data). Its distribution methods are not version-pinned."""
        return np.random.Generator(self._bit_generator())

    def describe(self) -> dict:
        return {"algorithm": self.ALGORITHM, "seed": self.seed, "path": list(self.path)}


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of ``n`` rows to ``L`` shards."""

    assignments: np.ndarray
    L: int
    seed: int

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.L)

    def shards(self) -> list[np.ndarray]:
        """Row positions of each shard, ascending within a shard."""
        order = np.argsort(self.assignments, kind="stable")
        bounds = np.cumsum(self.sizes())[:-1]
        return np.split(order, bounds)


def split_balanced(n: int, L: int, rng: RandomSource) -> Partition:
    """Uniform random partition of ``n`` rows into ``L`` shards whose sizes
    differ by at most one."""
    n, L = int(n), int(L)
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    if not 1 <= L <= n:
        raise InvalidArgument(f"shard count L={L} must satisfy 1 <= L <= n={n}")
    perm = rng.permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % L
    return Partition(_readonly(assignments), L, rng.seed)


def check_positive_int(name: str, value, minimum: int = 1) -> int:
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise InvalidArgument(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


__all__ = [
    "PVQError",
    "InvalidArgument",
    "DataMatrix",
    "as_labels",
    "RandomSource",
    "Partition",
    "split_balanced",
]
