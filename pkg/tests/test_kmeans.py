from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from maskindex.core import DimensionMismatch, make_rng
from maskindex.kmeans import TraceRecorder, assign, fit_batch, inertia_of, kmeans_fit
from oracles import best_two_partition, nearest_scan

FOUR = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
# global optimum of the 4-point problem, frozen from the 2-partition enumeration
FOUR_CENTROIDS = [(0.0, 0.5), (10.0, 0.5)]
FOUR_INERTIA = 1.0


class TestKMeansFit:
    def test_enumeration_oracle_matches_frozen_values(self):
        cost, cents = best_two_partition(FOUR)
        assert cost == FOUR_INERTIA
        assert sorted(map(tuple, np.round(cents, 12).tolist())) == FOUR_CENTROIDS

    @pytest.mark.parametrize("seed", range(5))
    def test_four_points_reach_global_optimum(self, seed):
        res = kmeans_fit(FOUR, 2, seed=seed)
        assert sorted(map(tuple, res.centroids.tolist())) == FOUR_CENTROIDS
        assert res.inertia == pytest.approx(FOUR_INERTIA, rel=1e-12)

    def test_k_equals_n_gives_zero_inertia(self, rng):
        X = rng.normal(size=(12, 3))
        res = kmeans_fit(X, 12, seed=3)
        assert res.inertia == 0.0
        assert sorted(map(tuple, res.centroids.tolist())) == sorted(map(tuple, X.tolist()))

    def test_k_one_is_mean(self, rng):
        X = rng.normal(size=(40, 4))
        res = kmeans_fit(X, 1, seed=0)
        np.testing.assert_allclose(res.centroids[0], X.mean(axis=0), rtol=1e-12, atol=1e-12)
        assert set(res.labels.tolist()) == {0}

    @pytest.mark.parametrize("k", [0, 5])
    def test_bad_k(self, k):
        with pytest.raises(ValueError):
            kmeans_fit(FOUR, k)

    def test_deterministic(self, rng):
        X = rng.normal(size=(200, 2))
        a, b = kmeans_fit(X, 9, seed=11), kmeans_fit(X, 9, seed=11)
        assert np.array_equal(a.centroids, b.centroids) and np.array_equal(a.labels, b.labels)

    def test_empty_cluster_repair_keeps_k_clusters(self):
        # duplicates force k-means++ to reuse points; repair must still give k non-empty clusters
        X = np.array([[0.0, 0.0]] * 6 + [[1.0, 1.0]] * 2)
        res = kmeans_fit(X, 3, seed=0)
        assert res.k == 3

    def test_trace_is_monotone_and_writes_csv(self, rng, tmp_path):
        X = np.concatenate([rng.normal(c, 1.0, size=(100, 2)) for c in (0, 6, 12)])
        rec = TraceRecorder()
        kmeans_fit(X, 7, seed=2, trace=rec)
        inertias = [r[1] for r in rec.rows]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(inertias, inertias[1:]))
        rec.write_csv(tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iteration,inertia,max_displacement"


class TestAssign:
    def test_exact_match(self):
        assert assign([[0.0, 0.0]], [[0.0, 0.0], [5.0, 5.0]]).tolist() == [0]

    def test_tie_goes_low(self):
        assert assign([[0.0, 0.0]], [[1.0, 0.0], [-1.0, 0.0]]).tolist() == [0]

    def test_brute_force_oracle(self, rng):
        X, C = rng.normal(size=(100, 3)), rng.normal(size=(10, 3))
        assert np.array_equal(assign(X, C), nearest_scan(X, C))

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            assign(np.zeros((2, 2)), np.zeros((2, 3)))


points_k = st.integers(2, 30).flatmap(lambda n: st.tuples(
    hnp.arrays(np.float64, (n, 2), elements=st.integers(-20, 20).map(float)),
    st.integers(1, n)))


class TestProperties:
    @given(points_k, st.integers(0, 2**32))
    def test_result_invariants(self, data, seed):
        X, k = data
        res = kmeans_fit(X, k, seed=seed)
        assert res.centroids.shape == (k, 2)
        assert res.labels.min() >= 0 and res.labels.max() < k
        assert np.array_equal(assign(X, res.centroids), res.labels)
        assert res.inertia == pytest.approx(inertia_of(X, res.centroids, res.labels), rel=1e-9, abs=1e-9)

    @given(points_k, st.integers(0, 2**32))
    def test_lloyd_monotone(self, data, seed):
        X, k = data
        rec = TraceRecorder()
        kmeans_fit(X, k, seed=seed, trace=rec)
        inertias = [r[1] for r in rec.rows]
        assert all(b <= a + 1e-9 * max(1.0, a) for a, b in zip(inertias, inertias[1:]))

    def test_batched_equals_single_groups(self, rng):
        X = rng.normal(size=(5, 20, 2))
        batch = fit_batch(X, 4, make_rng(0))
        for g in range(5):
            assert np.array_equal(assign(X[g], batch[g].centroids), batch[g].labels)


class TestCoverage:
    def test_doubling_k_does_not_worsen_coverage_on_average(self):
        rng = np.random.default_rng(0)
        X = np.concatenate([rng.standard_t(12, size=(250, 2)) + c for c in ((-6, -6), (6, 6), (-6, 6), (6, -6))])
        means = {}
        for k in (4, 8, 16, 32, 64):
            vals = []
            for seed in range(5):
                res = kmeans_fit(X, k, seed=seed)
                vals.append(np.sqrt(((X - res.centroids[res.labels]) ** 2).sum(axis=1)).mean())
            means[k] = np.mean(vals)
        ks = sorted(means)
        assert all(means[b] <= means[a] for a, b in zip(ks, ks[1:]))
