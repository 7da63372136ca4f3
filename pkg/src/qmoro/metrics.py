"""Pareto-front quality metrics for two-objective minimization.

Provides the Nadir reference point, a trapezoidal two-objective
hypervolume, and the relative hypervolume errors used to compare a
computed front (``delta_hv``) or a re-evaluated Pareto set
(``delta_hv_prime``) against a reference front.

Hypervolume convention: the front is sorted by the first objective and
clipped to the reference box; the dominated area is the piecewise-linear
(trapezoidal) area between consecutive front points plus a closing
rectangle from the last point to the first reference coordinate.  No
leading rectangle is added before the first point.  This convention is
fixed so that computed and reference fronts are always compared under
the identical measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Front2D",
    "delta_hv",
    "delta_hv_prime",
    "hypervolume_2d",
    "nadir_point",
]


@dataclass(frozen=True)
class Front2D:
    """A two-objective Pareto front.

    Args:
        points: Array of shape (n, 2), sorted ascending by the first
            objective with strictly decreasing second objective; mutually
            non-dominated.  Build via :meth:`from_points`.
    """

    points: np.ndarray

    @classmethod
    def from_points(cls, points: np.ndarray) -> "Front2D":
        """Construct a front from an arbitrary set of objective pairs.

        Dominated points and exact duplicates are removed, and the
        survivors are sorted ascending by the first objective.

        Args:
            points: Array-like of shape (n, 2).

        Raises:
            ValueError: If the points do not have exactly two objectives.
        """
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            return cls(points=np.empty((0, 2)))
        pts = np.atleast_2d(pts)
        if pts.shape[1] != 2:
            raise ValueError(f"expected two objectives, got {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("front points must be finite")
        # Sort by (q1, q2); a left-to-right sweep then keeps a point iff it
        # strictly improves the best second objective seen so far, which for
        # two objectives is exactly the non-dominated subset (deduplicated).
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        pts = pts[order]
        keep = []
        best_q2 = np.inf
        for row in pts:
            if row[1] < best_q2:
                keep.append(row)
                best_q2 = row[1]
        return cls(points=np.array(keep))

    @property
    def size(self) -> int:
        return self.points.shape[0]


def nadir_point(front: Front2D) -> np.ndarray:
    """Componentwise maxima of a reference front.

    Args:
        front: Non-empty reference front.

    Returns:
        Array ``(R1, R2)``.

    Raises:
        ValueError: If the front is empty.
    """
    if front.size == 0:
        raise ValueError("nadir point of an empty front is undefined")
    return np.max(front.points, axis=0)


def hypervolume_2d(front: Front2D, ref: np.ndarray) -> float:
    """Trapezoidal dominated area between a front and a reference point.

    Front points are clipped to the reference box; the area is the sum of
    trapezoids between consecutive clipped points plus the closing
    rectangle from the last point to ``ref[0]``.

    Args:
        front: Two-objective front.
        ref: Reference point ``(R1, R2)``.

    Returns:
        Non-negative area; 0 for an empty front.
    """
    if front.size == 0:
        return 0.0
    ref = np.asarray(ref, dtype=float).ravel()
    if ref.shape != (2,):
        raise ValueError("reference point must have exactly two objectives")
    pts = np.minimum(front.points, ref)
    q1, q2 = pts[:, 0], pts[:, 1]
    heights = ref[1] - q2
    widths = np.diff(q1)
    area = float(np.sum(widths * (heights[:-1] + heights[1:]) / 2.0))
    area += float((ref[0] - q1[-1]) * heights[-1])
    return area


def delta_hv(front: Front2D, reference: Front2D) -> float:
    """Relative hypervolume error of a front against a reference front.

    Both areas use the reference front's Nadir point as the common
    reference.

    Args:
        front: Computed front.
        reference: Reference front.

    Returns:
        ``|A - A_ref| / A_ref``.

    Raises:
        ValueError: If the reference area is zero (degenerate reference).
    """
    ref_point = nadir_point(reference)
    a_ref = hypervolume_2d(reference, ref_point)
    if a_ref == 0.0:
        raise ValueError("degenerate reference front: zero hypervolume")
    a = hypervolume_2d(front, ref_point)
    return abs(a - a_ref) / a_ref


def delta_hv_prime(
    model,
    spec,
    crn,
    con: np.ndarray,
    cat: np.ndarray,
    reference: Front2D,
) -> float:
    """Relative hypervolume error of a Pareto set re-evaluated exactly.

    The returned designs are re-evaluated with the true model under the
    frozen common-random-number context, the resulting quantile pairs form
    a front, and its area is compared with the reference area.

    Args:
        model: True objective model.
        spec: Problem specification.
        crn: Frozen common-random-number context.
        con: Continuous design rows, shape (n, C).
        cat: Categorical design rows, shape (n, K).
        reference: Reference front.

    Returns:
        ``|A' - A_ref| / A_ref``.
    """
    from .sampling import true_quantiles

    con = np.atleast_2d(np.asarray(con, dtype=float))
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    rows = [true_quantiles(model, spec, crn, con[i], cat[i]) for i in range(len(con))]
    front = Front2D.from_points(np.array(rows))
    return delta_hv(front, reference)
