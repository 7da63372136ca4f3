"""Tests for Pareto-front quality metrics."""

import numpy as np
import pytest

from qmoro.metrics import (
    Front2D,
    delta_hv,
    delta_hv_prime,
    hypervolume_2d,
    nadir_point,
)
from qmoro.problem import ContinuousVar, ObjectiveModel, ProblemSpec, RandomVarSpec
from qmoro.sampling import CrnContext


def random_front(rng: np.random.Generator, n: int = 10) -> Front2D:
    """A smooth strictly-decreasing random front in the unit box."""
    q1 = np.sort(rng.uniform(0.0, 1.0, n))
    q2 = np.sort(rng.uniform(0.0, 1.0, n))[::-1]
    q1 += np.arange(n) * 1e-9
    q2 += np.arange(n)[::-1] * 1e-9
    return Front2D.from_points(np.column_stack([q1, q2]))


def mc_polyline_area(front: Front2D, ref: np.ndarray, n_samples: int,
                     seed: int) -> float:
    """Monte Carlo estimate of the area between the front polyline and ref.

    Independent oracle: uniform samples in the reference box count as
    dominated when they lie on or above the piecewise-linear interpolant
    of the front (the region whose area the trapezoid rule integrates).
    """
    rng = np.random.default_rng(seed)
    pts = np.minimum(front.points, ref)
    lo1 = pts[0, 0]
    lo2 = float(np.min(pts[:, 1]))
    box_area = (ref[0] - lo1) * (ref[1] - lo2)
    x = rng.uniform(lo1, ref[0], n_samples)
    y = rng.uniform(lo2, ref[1], n_samples)
    boundary = np.interp(x, pts[:, 0], pts[:, 1])
    return box_area * float(np.mean(y >= boundary))


class TestFront2D:
    def test_sorts_and_removes_dominated(self):
        front = Front2D.from_points([(1, 2), (2, 1), (2, 2), (1, 2)])
        assert front.points.tolist() == [[1, 2], [2, 1]]

    def test_empty_input(self):
        assert Front2D.from_points([]).size == 0

    def test_equal_first_objective_keeps_lower_second(self):
        front = Front2D.from_points([(1, 3), (1, 2)])
        assert front.points.tolist() == [[1, 2]]

    def test_strictly_decreasing_second_objective(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, 1, size=(50, 2))
        front = Front2D.from_points(pts)
        assert np.all(np.diff(front.points[:, 0]) > 0)
        assert np.all(np.diff(front.points[:, 1]) < 0)

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ValueError, match="two objectives"):
            Front2D.from_points([(1.0, 2.0, 3.0)])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            Front2D.from_points([(np.nan, 1.0)])


class TestNadirPoint:
    def test_hand_case(self):
        front = Front2D.from_points([(1, 3), (2, 2), (3, 1)])
        assert nadir_point(front).tolist() == [3.0, 3.0]

    def test_single_point(self):
        assert nadir_point(Front2D.from_points([(2.5, 1.5)])).tolist() == [2.5, 1.5]

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            nadir_point(Front2D.from_points([]))


class TestHypervolume2D:
    def test_hand_case_is_exact(self):
        front = Front2D.from_points([(1, 3), (2, 2), (3, 1)])
        assert hypervolume_2d(front, np.array([4.0, 4.0])) == 7.0

    def test_single_point_closing_rectangle(self):
        front = Front2D.from_points([(1.0, 1.0)])
        assert hypervolume_2d(front, np.array([2.0, 2.0])) == 1.0

    def test_front_on_reference_boundary_is_zero(self):
        front = Front2D.from_points([(1.0, 4.0)])
        assert hypervolume_2d(front, np.array([4.0, 4.0])) == 0.0

    def test_empty_front_is_zero(self):
        assert hypervolume_2d(Front2D.from_points([]), np.array([4.0, 4.0])) == 0.0

    def test_points_beyond_reference_are_clipped(self):
        inside = Front2D.from_points([(1, 3), (2, 2), (3, 1)])
        padded = Front2D.from_points([(1, 3), (2, 2), (3, 1), (9, 0.5)])
        ref = np.array([4.0, 4.0])
        # The far point clips to the box edge and, being clipped, only adds
        # the area between q2=1 and q2=0.5 along the edge segment.
        assert hypervolume_2d(padded, ref) >= hypervolume_2d(inside, ref)

    def test_translation_covariance(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            front = random_front(rng)
            shift = rng.uniform(-5, 5, 2)
            ref = np.array([2.0, 2.0])
            base = hypervolume_2d(front, ref)
            moved = hypervolume_2d(Front2D.from_points(front.points + shift),
                                   ref + shift)
            assert moved == pytest.approx(base, rel=1e-12, abs=1e-12)

    def test_adding_point_below_polyline_never_decreases_area(self):
        # Under the trapezoid convention, monotonicity is guaranteed for
        # points on or below the current interpolant: they bulge the
        # polyline outward.
        rng = np.random.default_rng(23)
        ref = np.array([2.0, 2.0])
        for _ in range(20):
            front = random_front(rng)
            base = hypervolume_2d(front, ref)
            pts = front.points
            i = rng.integers(0, len(pts) - 1)
            lam = rng.uniform(0.1, 0.9)
            mid = (1 - lam) * pts[i] + lam * pts[i + 1]
            mid[1] -= rng.uniform(0.0, 0.2)
            grown = Front2D.from_points(np.vstack([pts, mid]))
            assert hypervolume_2d(grown, ref) >= base - 1e-12

    def test_matches_monte_carlo_oracle(self):
        rng = np.random.default_rng(31)
        ref = np.array([1.5, 1.5])
        for seed in range(5):
            front = random_front(rng)
            exact = hypervolume_2d(front, ref)
            mc = mc_polyline_area(front, ref, 100_000, seed=seed)
            assert exact == pytest.approx(mc, rel=0.02)

    def test_bad_reference_shape_rejected(self):
        with pytest.raises(ValueError, match="two objectives"):
            hypervolume_2d(Front2D.from_points([(1.0, 1.0)]), np.array([1.0, 2.0, 3.0]))


class TestDeltaHv:
    def test_identical_fronts_give_zero(self):
        front = Front2D.from_points([(1, 3), (2, 2), (3, 1)])
        assert delta_hv(front, front) == 0.0

    def test_half_area_gives_half(self):
        reference = Front2D.from_points([(0.0, 1.0), (1.0, 0.0)])
        shallow = Front2D.from_points([(0.0, 1.0), (1.0, 0.5)])
        assert delta_hv(shallow, reference) == pytest.approx(0.5, abs=1e-12)

    def test_degenerate_reference_rejected(self):
        front = Front2D.from_points([(1, 3), (2, 2)])
        with pytest.raises(ValueError, match="degenerate"):
            delta_hv(front, Front2D.from_points([(1.0, 1.0)]))


class TestDeltaHvPrime:
    def test_deterministic_model_reduces_to_front_error(self):
        # With a model ignoring its random inputs, every quantile equals
        # the deterministic objective, so the re-evaluated error must match
        # the plain front error of those objective pairs.
        spec = ProblemSpec(
            name="det", continuous=(ContinuousVar("d", 0.0, 1.0),),
            categorical=(), n_objectives=2, alpha=(0.9, 0.9),
            environmental=(RandomVarSpec("uniform", 0.0, 1.0, name="z"),),
        )
        model = ObjectiveModel(
            name="pair", n_objectives=2,
            fn=lambda con, cat: np.column_stack([con[:, 0], 1.0 - con[:, 0]]))
        crn = CrnContext.create(spec, n_samples=64, seed=0)
        designs = np.array([[0.2], [0.5], [0.8]])
        cats = np.zeros((3, 0), dtype=int)
        reference = Front2D.from_points([(0.0, 1.0), (1.0, 0.0)])
        direct = delta_hv(
            Front2D.from_points(np.column_stack([designs[:, 0], 1 - designs[:, 0]])),
            reference)
        via_model = delta_hv_prime(model, spec, crn, designs, cats, reference)
        assert via_model == pytest.approx(direct, rel=1e-12)
