"""K-means clustering of mixed points under the Gower distance.

Used to reduce the designs whose quantile estimates are too inaccurate to
a small set of well-spread enrichment candidates.  Centers combine the
continuous mean with the categorical mode; reported representatives are
actual members (medoids) so downstream consumers always receive real
designs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import stream

__all__ = ["MixedClustering", "gower_distances", "kmeans_mixed", "representatives"]

_STREAM_KMEANS = 31


@dataclass(frozen=True)
class MixedClustering:
    """Result of one mixed-variable k-means run.

    Args:
        assignments: Cluster id per input point, shape (n,).
        center_con: Continuous center coordinates, shape (k, C).
        center_cat: Categorical center levels, shape (k, K).
        k: Number of clusters.
        iterations: Lloyd iterations executed.
        total_distance: Sum of member-to-center Gower distances at
            termination.
    """

    assignments: np.ndarray
    center_con: np.ndarray
    center_cat: np.ndarray
    k: int
    iterations: int
    total_distance: float


def gower_distances(
    con: np.ndarray,
    cat: np.ndarray,
    other_con: np.ndarray,
    other_cat: np.ndarray,
    ranges: np.ndarray,
) -> np.ndarray:
    """Pairwise Gower distances between two mixed point sets.

    The distance averages the range-scaled absolute continuous differences
    and the categorical mismatch indicators over all variables.

    Args:
        con: Continuous rows, shape (n, C).
        cat: Categorical rows, shape (n, K).
        other_con: Continuous rows, shape (p, C).
        other_cat: Categorical rows, shape (p, K).
        ranges: Positive continuous ranges, shape (C,).

    Returns:
        Distance matrix of shape (n, p) with entries in [0, 1].
    """
    con = np.atleast_2d(np.asarray(con, dtype=float))
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    other_con = np.atleast_2d(np.asarray(other_con, dtype=float))
    other_cat = np.atleast_2d(np.asarray(other_cat, dtype=int))
    ranges = np.asarray(ranges, dtype=float).ravel()
    if np.any(ranges <= 0):
        raise ValueError("ranges must be strictly positive")
    n_vars = con.shape[1] + cat.shape[1]
    if n_vars == 0:
        raise ValueError("points must have at least one variable")
    total = np.zeros((con.shape[0], other_con.shape[0]))
    if con.shape[1]:
        total += np.sum(
            np.abs(con[:, None, :] - other_con[None, :, :]) / ranges, axis=2)
    if cat.shape[1]:
        total += np.sum(cat[:, None, :] != other_cat[None, :, :], axis=2)
    return total / n_vars


def _count_distinct(con: np.ndarray, cat: np.ndarray) -> int:
    rows = {tuple(con[i]) + tuple(cat[i]) for i in range(con.shape[0])}
    return len(rows)


def _farthest_point_seeds(
    con: np.ndarray,
    cat: np.ndarray,
    k: int,
    ranges: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Greedy farthest-point seed indices; first seed drawn from the stream."""
    n = con.shape[0]
    seeds = [int(rng.integers(0, n))]
    while len(seeds) < k:
        distance = gower_distances(con, cat, con[seeds], cat[seeds], ranges)
        nearest = distance.min(axis=1)
        seeds.append(int(np.argmax(nearest)))
    return np.array(seeds)


def _update_centers(
    con: np.ndarray,
    cat: np.ndarray,
    assignments: np.ndarray,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous mean and categorical mode per cluster (ties: lowest level)."""
    center_con = np.empty((k, con.shape[1]))
    center_cat = np.empty((k, cat.shape[1]), dtype=int)
    for j in range(k):
        members = assignments == j
        center_con[j] = con[members].mean(axis=0) if con.shape[1] else ()
        for column in range(cat.shape[1]):
            center_cat[j, column] = int(np.bincount(cat[members, column]).argmax())
    return center_con, center_cat


def kmeans_mixed(
    con: np.ndarray,
    cat: np.ndarray,
    k: int,
    ranges: np.ndarray,
    seed: int = 0,
    max_iter: int = 100,
) -> MixedClustering:
    """Lloyd k-means under the Gower distance.

    Points are assigned to the nearest center (ties to the lowest cluster
    id); centers are refreshed as continuous mean plus categorical mode;
    an empty cluster is reseeded with the point farthest from its current
    center.  Iteration stops when assignments stabilize or at
    ``max_iter``.

    Args:
        con: Continuous rows, shape (n, C).
        cat: Categorical rows, shape (n, K).
        k: Number of clusters.
        ranges: Positive continuous ranges for the Gower scaling.
        seed: Stream seed for the first-center draw.
        max_iter: Iteration cap.

    Returns:
        The clustering with every cluster non-empty.

    Raises:
        ValueError: If ``k`` exceeds the number of distinct points or is
            not positive.
    """
    con = np.atleast_2d(np.asarray(con, dtype=float))
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    n = con.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if k > _count_distinct(con, cat):
        raise ValueError(f"k={k} exceeds the number of distinct points")
    rng = stream(seed, _STREAM_KMEANS)
    seeds = _farthest_point_seeds(con, cat, k, ranges, rng)
    center_con, center_cat = con[seeds].copy(), cat[seeds].copy()

    assignments = np.full(n, -1)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        distance = gower_distances(con, cat, center_con, center_cat, ranges)
        new_assignments = distance.argmin(axis=1)
        for j in range(k):
            if not np.any(new_assignments == j):
                to_center = distance[np.arange(n), new_assignments]
                farthest = int(np.argmax(to_center))
                new_assignments[farthest] = j
                distance[farthest] = 0.0
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        center_con, center_cat = _update_centers(con, cat, assignments, k)

    distance = gower_distances(con, cat, center_con, center_cat, ranges)
    total = float(distance[np.arange(n), assignments].sum())
    return MixedClustering(assignments=assignments, center_con=center_con,
                           center_cat=center_cat, k=k, iterations=iterations,
                           total_distance=total)


def representatives(
    clustering: MixedClustering,
    con: np.ndarray,
    cat: np.ndarray,
    ranges: np.ndarray,
) -> np.ndarray:
    """Index of the member nearest its cluster center, per cluster.

    Ties are broken toward the lowest point index, so representatives are
    deterministic and always actual members of the input set.

    Args:
        clustering: Result of :func:`kmeans_mixed` over the same points.
        con: Continuous rows, shape (n, C).
        cat: Categorical rows, shape (n, K).
        ranges: Gower ranges used for the clustering.

    Returns:
        Array of ``clustering.k`` point indices.
    """
    con = np.atleast_2d(np.asarray(con, dtype=float))
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    chosen = np.empty(clustering.k, dtype=int)
    for j in range(clustering.k):
        members = np.flatnonzero(clustering.assignments == j)
        distance = gower_distances(
            con[members], cat[members],
            clustering.center_con[j:j + 1], clustering.center_cat[j:j + 1],
            ranges)[:, 0]
        chosen[j] = members[int(np.argmin(distance))]
    return chosen
