"""Tests for Gower-distance k-means."""

import numpy as np
import pytest

from qmoro.cluster import gower_distances, kmeans_mixed, representatives

RANGES_2D = np.array([1.0, 1.0])


def two_blobs():
    """Two tight continuous blobs roughly ten diameters apart."""
    rng = np.random.default_rng(0)
    blob1 = np.column_stack([rng.uniform(0, 0.05, 20), rng.uniform(0, 0.05, 20)])
    blob2 = blob1 + 0.9
    return np.vstack([blob1, blob2]), np.zeros((40, 0), dtype=int)


class TestGowerDistances:
    def test_hand_value_mixed(self):
        # (|0.4|/2)/3 averaged with one categorical mismatch over 3 variables.
        d = gower_distances([[0.3, 0.5]], [[0]], [[0.7, 0.5]], [[1]],
                            np.array([2.0, 4.0]))
        assert d[0, 0] == pytest.approx((0.2 + 0.0 + 1.0) / 3.0)

    def test_identical_points_zero(self):
        d = gower_distances([[0.1, 0.2]], [[2]], [[0.1, 0.2]], [[2]], RANGES_2D)
        assert d[0, 0] == 0.0

    def test_range_normalization_bounds_distance(self):
        rng = np.random.default_rng(1)
        con = rng.uniform(0, 1, (10, 2))
        cat = rng.integers(0, 3, (10, 2))
        d = gower_distances(con, cat, con[::-1], cat[::-1], RANGES_2D)
        assert np.all(d >= 0.0) and np.all(d <= 1.0)

    def test_nonpositive_range_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            gower_distances([[0.0]], [[0]], [[1.0]], [[0]], np.array([0.0]))


class TestKmeansMixed:
    def test_separated_blobs_recovered(self):
        con, cat = two_blobs()
        clustering = kmeans_mixed(con, cat, 2, RANGES_2D, seed=3)
        first, second = clustering.assignments[:20], clustering.assignments[20:]
        assert len(set(first)) == 1 and len(set(second)) == 1
        assert first[0] != second[0]

    def test_one_cluster_per_distinct_point(self):
        con = np.array([[0.1], [0.5], [0.9]])
        cat = np.zeros((3, 0), dtype=int)
        clustering = kmeans_mixed(con, cat, 3, np.array([1.0]), seed=1)
        assert clustering.total_distance == 0.0
        assert sorted(clustering.center_con[:, 0].tolist()) == [0.1, 0.5, 0.9]

    def test_identical_points_single_cluster(self):
        con = np.tile([[0.3, 0.3]], (5, 1))
        cat = np.zeros((5, 0), dtype=int)
        clustering = kmeans_mixed(con, cat, 1, RANGES_2D, seed=0)
        assert clustering.center_con[0].tolist() == [0.3, 0.3]
        assert clustering.total_distance == 0.0

    def test_too_many_clusters_rejected(self):
        con = np.tile([[0.3, 0.3]], (5, 1))
        with pytest.raises(ValueError, match="distinct"):
            kmeans_mixed(con, np.zeros((5, 0), dtype=int), 2, RANGES_2D, seed=0)

    def test_invalid_parameters_rejected(self):
        con = np.array([[0.1], [0.9]])
        cat = np.zeros((2, 0), dtype=int)
        with pytest.raises(ValueError, match="at least 1"):
            kmeans_mixed(con, cat, 0, np.array([1.0]))
        with pytest.raises(ValueError, match="max_iter"):
            kmeans_mixed(con, cat, 1, np.array([1.0]), max_iter=0)

    def test_deterministic_for_fixed_seed(self):
        con, cat = two_blobs()
        a = kmeans_mixed(con, cat, 2, RANGES_2D, seed=3)
        b = kmeans_mixed(con, cat, 2, RANGES_2D, seed=3)
        assert np.array_equal(a.assignments, b.assignments)
        assert np.array_equal(a.center_con, b.center_con)

    def test_every_cluster_nonempty(self):
        rng = np.random.default_rng(4)
        con = rng.uniform(0, 1, (30, 2))
        cat = rng.integers(0, 2, (30, 1))
        clustering = kmeans_mixed(con, cat, 6, RANGES_2D, seed=5)
        counts = np.bincount(clustering.assignments, minlength=6)
        assert np.all(counts >= 1)

    def test_total_distance_non_increasing_over_iterations(self):
        # The same seeded trajectory truncated at growing iteration caps
        # exposes the per-iteration totals.
        rng = np.random.default_rng(0)
        con = rng.uniform(0, 1, (60, 2))
        cat = rng.integers(0, 3, (60, 1))
        totals = [kmeans_mixed(con, cat, 4, RANGES_2D, seed=7, max_iter=t).total_distance
                  for t in range(1, 8)]
        assert all(b <= a + 1e-12 for a, b in zip(totals, totals[1:]))

    def test_assignments_are_nearest_center(self):
        rng = np.random.default_rng(9)
        con = rng.uniform(0, 1, (50, 2))
        cat = rng.integers(0, 2, (50, 1))
        clustering = kmeans_mixed(con, cat, 3, RANGES_2D, seed=2)
        distance = gower_distances(con, cat, clustering.center_con,
                                   clustering.center_cat, RANGES_2D)
        np.testing.assert_array_equal(clustering.assignments,
                                      distance.argmin(axis=1))

    def test_categorical_mode_ties_take_lowest_level(self):
        con = np.zeros((4, 1))
        cat = np.array([[1], [0], [1], [0]])
        clustering = kmeans_mixed(con, cat, 1, np.array([1.0]), seed=0)
        assert clustering.center_cat[0, 0] == 0


class TestRepresentatives:
    def test_singleton_cluster_returns_member(self):
        con = np.array([[0.1], [0.9]])
        cat = np.zeros((2, 0), dtype=int)
        clustering = kmeans_mixed(con, cat, 2, np.array([1.0]), seed=0)
        reps = representatives(clustering, con, cat, np.array([1.0]))
        assert sorted(reps.tolist()) == [0, 1]

    def test_symmetric_pair_takes_lower_index(self):
        con = np.array([[0.2], [0.8]])
        cat = np.zeros((2, 0), dtype=int)
        clustering = kmeans_mixed(con, cat, 1, np.array([1.0]), seed=0)
        reps = representatives(clustering, con, cat, np.array([1.0]))
        assert reps.tolist() == [0]

    def test_one_representative_per_blob(self):
        con, cat = two_blobs()
        clustering = kmeans_mixed(con, cat, 2, RANGES_2D, seed=3)
        reps = representatives(clustering, con, cat, RANGES_2D)
        sides = sorted(int(r < 20) for r in reps)
        assert sides == [0, 1]

    def test_representatives_are_input_members(self):
        rng = np.random.default_rng(12)
        con = rng.uniform(0, 1, (25, 2))
        cat = rng.integers(0, 3, (25, 1))
        clustering = kmeans_mixed(con, cat, 5, RANGES_2D, seed=8)
        reps = representatives(clustering, con, cat, RANGES_2D)
        assert len(set(reps.tolist())) == 5
        assert np.all((reps >= 0) & (reps < 25))
        for j, index in enumerate(reps):
            assert clustering.assignments[index] == j
