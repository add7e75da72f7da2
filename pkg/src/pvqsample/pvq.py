"""Parallel vector-quantization sampling.

The window is split at random into ``L`` balanced shards. Each shard is
quantized independently with a batch SOM of ``ceil(5 * sqrt(|shard|))``
units, and every unit that attracts at least one row contributes the row
closest to it. The sample is the union over shards, so its size is at most
``sum_k ceil(5 * sqrt(|s_k|))`` (about ``5 * sqrt(n * L)``), and ``L`` is the
knob that sets it.

Shards are independent, so the Map phase runs on a process pool; results are
gathered in shard order and every shard draws from its own RNG stream, which
makes the output independent of the number of workers.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .core import DataMatrix, InvalidArgument, Partition, RandomSource, split_balanced
from .som import TrainSchedule, codebook_size, init_codebook, batch_train, map_to_bmu, plan_topology

log = logging.getLogger(__name__)


def available_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not on Linux
        return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class ShardSample:
    shard_index: int
    representative_rows: np.ndarray
    codebook_size_used: int
    non_empty_cells: int
    shard_rows: int
    grid: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "shard_index": self.shard_index,
            "shard_rows": self.shard_rows,
            "codebook_size": self.codebook_size_used,
            "grid": list(self.grid),
            "non_empty_cells": self.non_empty_cells,
            "representative_rows": self.representative_rows.tolist(),
        }


@dataclass(frozen=True, eq=False)
class SampleResult:
    """Sampled row ids plus provenance.

    ``rows`` holds original row ids in reduce order (shard by shard, units in
    index order within a shard). ``config`` echoes everything needed to rerun
    the draw. ``shards`` is empty for samplers without shard structure.
    """

    rows: np.ndarray
    method: str
    config: dict
    shards: tuple[ShardSample, ...] = ()

    def __len__(self) -> int:
        return int(self.rows.size)

    @property
    def size_bound(self) -> int | None:
        if not self.shards:
            return None
        return sum(codebook_size(s.shard_rows) for s in self.shards)

    def shard_of(self) -> np.ndarray:
        """Shard index per sampled row (-1 when there are no shards)."""
        if not self.shards:
            return np.full(self.rows.size, -1, dtype=np.int64)
        return np.concatenate([
            np.full(s.representative_rows.size, s.shard_index, dtype=np.int64) for s in self.shards
        ])

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "config": self.config,
            "size": len(self),
            "rows": self.rows.tolist(),
        }
        if self.shards:
            out["size_bound"] = self.size_bound
            out["shards"] = [s.to_dict() for s in self.shards]
        return out

    def to_json(self) -> str:
        """Canonical JSON: sorted keys and fixed separators, so equal results
        serialize to equal bytes."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def estimated_size(n: int, L: int) -> float:
    """Approximate sample size for ``n`` rows in ``L`` shards: 5 * sqrt(n * L)."""
    return 5.0 * math.sqrt(n * L)


def size_bound(shard_sizes) -> int:
    return sum(codebook_size(int(s)) for s in shard_sizes)


def choose_shard_count(n: int, target: int) -> int:
    """Shard count whose estimated sample size is closest to ``target``.

    Inverts ``target = 5 * sqrt(n * L)``: ``L = round(target**2 / (25 * n))``
    (half rounds up), clamped to ``[1, n]``.
    """
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    if target < 1:
        raise InvalidArgument("target sample size must be >= 1")
    n, target = int(n), int(target)
    L = (2 * target * target + 25 * n) // (50 * n)
    clamped = min(max(L, 1), n)
    if clamped != L:
        log.warning(
            "target %d not reachable for n=%d; using L=%d (estimated size %.0f)",
            target, n, clamped, estimated_size(n, clamped),
        )
    return clamped


def sample_shard(shard: DataMatrix, schedule: TrainSchedule | None, rng: RandomSource,
                 shard_index: int = 0) -> ShardSample:
    """Representatives of one shard: for each non-empty Voronoi cell of the
    trained map, the row nearest its centroid (lowest row id on ties)."""
    m = codebook_size(shard.n)
    topology = plan_topology(m, shard)
    codebook = batch_train(shard, init_codebook(shard, topology, rng), schedule)
    mapping = map_to_bmu(shard, codebook)
    order = np.lexsort((shard.row_ids, mapping.distance, mapping.bmu))
    units = mapping.bmu[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = units[1:] != units[:-1]
    reps = shard.row_ids[order[first]]
    return ShardSample(
        shard_index=shard_index,
        representative_rows=reps,
        codebook_size_used=m,
        non_empty_cells=int(reps.size),
        shard_rows=shard.n,
        grid=(topology.rows, topology.cols),
    )


def _shard_task(args) -> ShardSample:
    k, values, row_ids, schedule, rng = args
    return sample_shard(DataMatrix(values, row_ids), schedule, rng, shard_index=k)


def _single_thread_blas():
    threadpool_limits(1)


def _pool_context():
    methods = multiprocessing.get_all_start_methods()
    return multiprocessing.get_context("fork" if "fork" in methods else "spawn")


def shard_plan(n: int, L: int, rng: RandomSource) -> tuple[Partition, list[RandomSource]]:
    """The partition and per-shard streams :func:`pvq` uses for a given seed."""
    partition = split_balanced(n, L, rng.child("partition"))
    return partition, [rng.child("shard", k) for k in range(L)]


def pvq(data: DataMatrix, L: int, schedule: TrainSchedule | None = None,
        rng: RandomSource | None = None, workers: int | None = 1) -> SampleResult:
    """Sample ``data`` with ``L`` independently quantized shards.

    ``workers`` sets the size of the process pool for the Map phase
    (``None``: all available CPUs). It never changes the result.
    """
    if isinstance(L, bool) or int(L) != L or not 1 <= L <= data.n:
        raise InvalidArgument(f"shard count L={L!r} must satisfy 1 <= L <= n={data.n}")
    L = int(L)
    rng = rng or RandomSource(0)
    schedule = schedule or TrainSchedule()
    workers = available_workers() if workers is None else int(workers)
    if workers < 1:
        raise InvalidArgument("workers must be >= 1")
    partition, shard_rngs = shard_plan(data.n, L, rng)
    tasks = [
        (k, data.values[pos], data.row_ids[pos], schedule, shard_rngs[k])
        for k, pos in enumerate(partition.shards())
    ]
    workers = min(workers, L)
    if workers == 1:
        with threadpool_limits(1):
            shards = [_shard_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(workers, mp_context=_pool_context(),
                                 initializer=_single_thread_blas) as pool:
            shards = list(pool.map(_shard_task, tasks, chunksize=max(1, L // (8 * workers))))
    rows = np.concatenate([s.representative_rows for s in shards])
    config = {
        "L": L,
        "n": data.n,
        "seed": rng.seed,
        "rng": rng.describe(),
        "schedule": schedule.to_dict(),
        "estimated_size": round(estimated_size(data.n, L), 6),
    }
    log.info("pvq: n=%d L=%d -> %d rows", data.n, L, rows.size)
    return SampleResult(rows, "pvq", config, tuple(shards))


def pvq_to_target(data: DataMatrix, target: int, schedule: TrainSchedule | None = None,
                  rng: RandomSource | None = None, workers: int | None = 1) -> SampleResult:
    """Pick ``L`` for a desired sample size, then run :func:`pvq`."""
    L = choose_shard_count(data.n, target)
    result = pvq(data, L, schedule, rng, workers)
    result.config["target"] = int(target)
    return result
