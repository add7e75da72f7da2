import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pvqsample.core import DataMatrix, InvalidArgument, RandomSource
from pvqsample.som import (
    Codebook,
    SomTopology,
    TrainSchedule,
    batch_epoch,
    batch_train,
    codebook_size,
    init_codebook,
    map_to_bmu,
    plan_topology,
    quantization_error,
    train_som,
)


def brute_bmu(x, c):
    """Exhaustive search with exact squared differences, lowest index on ties."""
    out = np.empty(len(x), dtype=int)
    for i, row in enumerate(x):
        d = ((c - row) ** 2).sum(axis=1)
        out[i] = int(np.flatnonzero(d == d.min())[0])
    return out


def lloyd_step(x, c):
    """Reference k-means update; empty clusters keep their centroid."""
    bmu = brute_bmu(x, c)
    out = c.copy()
    for j in range(len(c)):
        members = x[bmu == j]
        if len(members):
            out[j] = members.mean(axis=0)
    return out


class TestCodebookSize:
    @pytest.mark.parametrize("n, m", [(1, 5), (100, 50), (80_000, 1415), (4, 10), (2, 8)])
    def test_examples(self, n, m):
        assert codebook_size(n) == m

    @given(st.integers(1, 10**12))
    def test_is_ceiling_of_five_root_n(self, n):
        m = codebook_size(n)
        assert m * m >= 25 * n > (m - 1) ** 2

    @given(st.integers(1, 10**6))
    def test_float_formula_away_from_squares(self, n):
        if math.isqrt(25 * n) ** 2 != 25 * n:
            assert codebook_size(n) == math.ceil(5 * math.sqrt(n))

    @given(st.integers(1, 10**8))
    def test_monotone(self, n):
        assert codebook_size(n + 1) >= codebook_size(n)

    @pytest.mark.parametrize("bad", [0, -3, 2.5, True])
    def test_invalid(self, bad):
        with pytest.raises(InvalidArgument):
            codebook_size(bad)


class TestPlanTopology:
    def test_isotropic_square(self):
        x = DataMatrix([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        t = plan_topology(4, x)
        assert (t.rows, t.cols) == (2, 2)

    def test_single_unit(self):
        t = plan_topology(1, DataMatrix([[0.0, 1.0]]))
        assert (t.rows, t.cols) == (1, 1)

    def test_elongated_data(self):
        # eigenvalue ratio 4 -> side ratio 2
        x = DataMatrix([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        t = plan_topology(50, x)
        assert (t.rows, t.cols) == (10, 5)

    def test_ratio_clamped(self):
        x = DataMatrix([[1000.0, 0.0], [-1000.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        t = plan_topology(100, x)
        assert (t.rows, t.cols) == (34, 3)

    def test_degenerate_is_near_square(self):
        x = DataMatrix(np.arange(20.0)[:, None])
        t = plan_topology(23, x)
        assert (t.rows, t.cols) == (5, 5)
        assert t.n_units == 23

    @settings(max_examples=200, deadline=None)
    @given(m=st.integers(1, 5000), ratio=st.floats(1.0, 1e4))
    def test_invariants(self, m, ratio):
        x = DataMatrix([[math.sqrt(ratio), 0.0], [-math.sqrt(ratio), 0.0], [0.0, 1.0], [0.0, -1.0]])
        t = plan_topology(m, x)
        assert t.rows >= t.cols >= 1
        assert (t.rows - 1) * t.cols < m <= t.rows * t.cols
        assert t.n_units == m
        assert len(t.positions()) == m

    def test_topology_validation(self):
        with pytest.raises(InvalidArgument):
            SomTopology(10, 2, 3)
        with pytest.raises(InvalidArgument):
            SomTopology(3, 3, 3)


class TestInit:
    def test_one_unit_is_mean(self):
        x = np.array([[0.0, 0.0], [2.0, 4.0], [4.0, 2.0]])
        cb = init_codebook(DataMatrix(x), SomTopology(1, 1, 1), RandomSource(0))
        assert np.allclose(cb.centroids, [[2.0, 2.0]])

    def test_linear_spans_two_sd(self):
        x = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        t = SomTopology(4, 2, 2)
        c = init_codebook(DataMatrix(x), t, RandomSource(0)).centroids
        sd1, sd2 = math.sqrt(8 / 3), math.sqrt(2 / 3)
        expected = [[-2 * sd1, -2 * sd2], [-2 * sd1, 2 * sd2], [2 * sd1, -2 * sd2], [2 * sd1, 2 * sd2]]
        assert np.allclose(c, expected, atol=1e-12)

    def test_fallback_uses_rows(self):
        x = np.arange(10.0)[:, None]
        c = init_codebook(DataMatrix(x), SomTopology(4, 2, 2), RandomSource(3)).centroids
        assert set(c.ravel()) <= set(x.ravel())
        assert len(set(c.ravel())) == 4

    def test_deterministic(self, blobs2d):
        t = plan_topology(20, blobs2d)
        a = init_codebook(blobs2d, t, RandomSource(1)).centroids
        b = init_codebook(blobs2d, t, RandomSource(1)).centroids
        assert a.tobytes() == b.tobytes()


class TestMapToBmu:
    def test_matches_brute_force(self, rng):
        x = rng.normal(size=(700, 5))
        c = rng.normal(size=(37, 5))
        t = SomTopology(37, 7, 6)
        got = map_to_bmu(DataMatrix(x), Codebook(c, t))
        assert np.array_equal(got.bmu, brute_bmu(x, c))
        assert np.allclose(got.distance, np.sqrt(((x - c[got.bmu]) ** 2).sum(axis=1)))

    def test_ties_go_to_lowest_index(self):
        c = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        x = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.5]])
        got = map_to_bmu(DataMatrix(x), Codebook(c, SomTopology(4, 2, 2))).bmu
        assert got.tolist() == [0, 0, 0]

    def test_near_ties_are_exact(self):
        # distances that differ only in the last bits of a large offset
        base = 1e8
        c = np.array([[base, 0.0], [base, 1e-4]])
        x = np.array([[base, 0.49e-4], [base, 0.51e-4]])
        got = map_to_bmu(DataMatrix(x), Codebook(c, SomTopology(2, 2, 1))).bmu
        assert got.tolist() == brute_bmu(x, c).tolist() == [0, 1]

    @settings(max_examples=100, deadline=None)
    @given(
        x=arrays(np.float64, (30, 3), elements=st.integers(-3, 3).map(float)),
        c=arrays(np.float64, (6, 3), elements=st.integers(-3, 3).map(float)),
    )
    def test_integer_grid_ties(self, x, c):
        # integer coordinates produce many exact ties
        got = map_to_bmu(DataMatrix(x), Codebook(c, SomTopology(6, 3, 2))).bmu
        assert np.array_equal(got, brute_bmu(x, c))

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            map_to_bmu(DataMatrix(np.zeros((2, 3))), Codebook(np.zeros((1, 2)), SomTopology(1, 1, 1)))


class TestBatchTrain:
    def test_single_unit_converges_to_mean(self, rng):
        x = rng.normal(size=(50, 3))
        cb = train_som(DataMatrix(x), RandomSource(0), m=1)
        assert np.allclose(cb.centroids[0], x.mean(axis=0), atol=1e-12)

    def test_identical_points(self):
        x = np.tile([[1.5, -2.0]], (9, 1))
        cb = train_som(DataMatrix(x), RandomSource(0))
        assert np.allclose(map_to_bmu(DataMatrix(x), cb).distance, 0.0)

    def test_radius_zero_epoch_is_lloyd(self, rng):
        for trial in range(5):
            x = rng.normal(size=(100, 3))
            c = rng.normal(size=(12, 3))
            t = SomTopology(12, 4, 3)
            got = batch_epoch(x, c, t.grid_sq_distances(), 0.0)
            assert np.allclose(got, lloyd_step(x, c), rtol=0, atol=1e-9)

    def test_lloyd_schedule_reaches_kmeans_fixed_point(self, rng):
        x = np.vstack([rng.normal(mu, 0.3, size=(40, 2)) for mu in ([0, 0], [5, 0], [0, 5], [5, 5])])
        t = SomTopology(4, 2, 2)
        cb = batch_train(DataMatrix(x), init_codebook(DataMatrix(x), t, RandomSource(0)), TrainSchedule.lloyd(50))
        c = cb.centroids
        ref = c.copy()
        for _ in range(50):
            ref = lloyd_step(x, ref)
        assert np.allclose(c, ref, atol=1e-6)
        assert np.allclose(lloyd_step(x, c), c, atol=1e-6)

    def test_kernel_epoch_matches_definition(self, rng):
        x = rng.normal(size=(60, 2))
        t = SomTopology(6, 3, 2)
        c = rng.normal(size=(6, 2))
        r = 1.3
        g = t.grid_sq_distances()
        bmu = brute_bmu(x, c)
        h = np.exp(-g / (2 * r * r))[bmu]  # (n, m): weight of row i for unit j
        expected = (h.T @ x) / h.sum(axis=0)[:, None]
        assert np.allclose(batch_epoch(x, c, g, r), expected, atol=1e-12)

    def test_reduces_quantization_error(self, blobs2d):
        t = plan_topology(codebook_size(blobs2d.n), blobs2d)
        init = init_codebook(blobs2d, t, RandomSource(0))
        trained = batch_train(blobs2d, init)
        assert quantization_error(blobs2d, trained) < quantization_error(blobs2d, init)

    def test_lloyd_epochs_do_not_increase_error(self, rng):
        x = rng.normal(size=(200, 3))
        t = SomTopology(10, 5, 2)
        c = x[:10].copy()
        g = t.grid_sq_distances()
        errors = []
        for _ in range(15):
            c = batch_epoch(x, c, g, 0.0)
            errors.append(quantization_error(x, Codebook(c, t)))
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))

    def test_centroids_stay_in_bounding_box(self, blobs2d):
        cb = train_som(blobs2d, RandomSource(4))
        lo, hi = blobs2d.values.min(axis=0), blobs2d.values.max(axis=0)
        # the +-2 sd linear init may start outside; training pulls every
        # centroid that ever wins a row inside the hull
        hits = map_to_bmu(blobs2d, cb).hits(cb.topology.n_units)
        inside = cb.centroids[hits > 0]
        assert (inside >= lo - 1e-9).all() and (inside <= hi + 1e-9).all()

    def test_bitwise_repeatable(self, blobs2d):
        a = train_som(blobs2d, RandomSource(8)).centroids
        b = train_som(blobs2d, RandomSource(8)).centroids
        assert a.tobytes() == b.tobytes()

    def test_skipping_stable_epochs_changes_nothing(self, rng):
        x = rng.normal(size=(80, 2))
        t = SomTopology(6, 3, 2)
        init = init_codebook(DataMatrix(x), t, RandomSource(0))
        sched = TrainSchedule(3, 12, None, 1.0, 0.0, 0.0)
        c = np.array(init.centroids)
        for r in sched.radii(t):
            c = batch_epoch(x, c, t.grid_sq_distances(), float(r))
        assert batch_train(DataMatrix(x), init, sched).centroids.tobytes() == c.tobytes()

    def test_rejects_non_finite(self):
        cb = Codebook(np.zeros((1, 2)), SomTopology(1, 1, 1))
        with pytest.raises(InvalidArgument):
            batch_train(np.array([[np.nan, 0.0]]), cb)


class TestSchedule:
    def test_default_radii(self):
        r = TrainSchedule().radii(SomTopology(50, 10, 5))
        assert r.size == 20
        assert r[0] == 2.5 and r[9] == 1.0 and r[10] == 1.0 and r[-1] == 0.0

    def test_small_map_starts_at_one(self):
        assert TrainSchedule().radii(SomTopology(4, 2, 2))[0] == 1.0

    def test_lloyd_is_all_zero(self):
        assert not TrainSchedule.lloyd(7).radii(SomTopology(4, 2, 2)).any()

    @pytest.mark.parametrize("kw", [{"rough_epochs": 0}, {"fine_radius_end": -1.0}, {"rough_radius_start": 0.5}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgument):
            TrainSchedule(**kw)


def test_codebook_json_roundtrip(tmp_path, blobs2d):
    cb = train_som(blobs2d, RandomSource(2))
    cb.save(tmp_path / "cb.json")
    back = Codebook.load(tmp_path / "cb.json")
    assert back.topology == cb.topology
    assert back.centroids.tobytes() == cb.centroids.tobytes()
    assert json.loads((tmp_path / "cb.json").read_text())["topology"]["lattice"] == "rect"
