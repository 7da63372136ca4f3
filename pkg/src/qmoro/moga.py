"""NSGA-II for mixed continuous-categorical design spaces.

Continuous variables undergo simulated binary crossover and polynomial
mutation; categorical variables undergo one-point crossover and uniform
random reset mutation.  Selection is binary tournament on (rank, crowding)
with constrained dominance: feasible individuals dominate infeasible ones,
and infeasible individuals are ordered by total constraint violation.

The objective map must be deterministic (the common-random-numbers
contract upstream guarantees this for quantile objectives); every random
draw is keyed by (seed, purpose, generation, pair), so results never
depend on evaluation order or parallel scheduling.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metrics import Front2D, hypervolume_2d, nadir_point
from .problem import ProblemSpec, constraint_violations
from .sampling import lhs_sample, stream

__all__ = [
    "GaConfig",
    "GaResult",
    "crowding_distance",
    "dominates",
    "nondominated_sort",
    "onepoint_crossover_cat",
    "polynomial_mutation",
    "random_mutation_cat",
    "run_nsga2",
    "sbx_crossover",
]

_STREAM_INIT = 21
_STREAM_TOURNAMENT = 22
_STREAM_VARIATION = 23

# Mixes the user seed with a stream tag; the multiplier keeps distinct
# (seed, tag) pairs mapping to distinct derived seeds.
_SEED_MIX = 1000003

HV_REL_TOL = 1e-4
HV_WINDOW = 10


@dataclass(frozen=True)
class GaConfig:
    """Genetic-algorithm settings.

    Args:
        population: Population size L (even).
        max_generations: Generation cap.
        p_crossover: Pair-level crossover probability gating both the
            continuous and the categorical crossover.
        eta_crossover: Simulated-binary-crossover distribution index.
        eta_mutation: Polynomial-mutation distribution index.
        mutation_prob: Per-variable mutation probability; ``None`` selects
            1/M with M the number of design variables.
        seed: Base seed for all internal random streams.
    """

    population: int = 100
    max_generations: int = 100
    p_crossover: float = 0.9
    eta_crossover: float = 20.0
    eta_mutation: float = 20.0
    mutation_prob: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 2 or self.population % 2:
            raise ValueError("population size must be even and at least 2")
        if self.max_generations < 1:
            raise ValueError("max_generations must be at least 1")
        if not 0.0 <= self.p_crossover <= 1.0:
            raise ValueError("p_crossover must lie in [0, 1]")
        if self.mutation_prob is not None and not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")


@dataclass
class GaResult:
    """Final population and non-dominated set of one NSGA-II run.

    Args:
        con: Continuous coordinates of the final population, shape (L, C).
        cat: Categorical indices of the final population, shape (L, K).
        objectives: Final population objectives, shape (L, m).
        violations: Total constraint violation per individual, shape (L,).
        front_indices: Population rows forming the best non-dominated set.
        generations: Number of generations executed.
        converged: Whether the internal hypervolume test triggered.
        history: One record per generation with hypervolume and feasible
            fraction.
    """

    con: np.ndarray
    cat: np.ndarray
    objectives: np.ndarray
    violations: np.ndarray
    front_indices: np.ndarray
    generations: int
    converged: bool
    history: list[dict] = field(default_factory=list)

    @property
    def front_con(self) -> np.ndarray:
        return self.con[self.front_indices]

    @property
    def front_cat(self) -> np.ndarray:
        return self.cat[self.front_indices]

    @property
    def front_objectives(self) -> np.ndarray:
        return self.objectives[self.front_indices]


def dominates(a: np.ndarray, b: np.ndarray) -> bool:
    """Pareto dominance for minimization.

    Args:
        a: Objective vector.
        b: Objective vector of the same length.

    Returns:
        True iff ``a`` is no worse in every objective and strictly better
        in at least one.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("objective vectors must have equal length")
    return bool(np.all(a <= b) and np.any(a < b))


def _domination_matrix(objectives: np.ndarray, violations: np.ndarray) -> np.ndarray:
    """Boolean matrix D with D[i, j] true iff i constrained-dominates j."""
    n = objectives.shape[0]
    feasible = violations <= 0.0
    no_worse = np.all(objectives[:, None, :] <= objectives[None, :, :], axis=2)
    better = np.any(objectives[:, None, :] < objectives[None, :, :], axis=2)
    matrix = np.zeros((n, n), dtype=bool)
    ff = np.ix_(feasible, feasible)
    matrix[ff] = (no_worse & better)[ff]
    matrix[np.ix_(feasible, ~feasible)] = True
    ii = np.ix_(~feasible, ~feasible)
    matrix[ii] = (violations[:, None] < violations[None, :])[ii]
    np.fill_diagonal(matrix, False)
    return matrix


def nondominated_sort(
    objectives: np.ndarray,
    violations: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Partition a population into successive non-dominated fronts.

    Constrained dominance applies first: any feasible individual dominates
    any infeasible one, and infeasible individuals are compared by total
    violation.

    Args:
        objectives: Objective matrix, shape (n, m), all finite.
        violations: Total violation per individual (≤ 0 means feasible);
            ``None`` treats everyone as feasible.

    Returns:
        List of index arrays; the first is the maximal non-dominated set,
        each later front is maximal in the residual population.
    """
    objectives = np.atleast_2d(np.asarray(objectives, dtype=float))
    n = objectives.shape[0]
    if violations is None:
        violations = np.zeros(n)
    else:
        violations = np.asarray(violations, dtype=float).ravel()
    if not np.all(np.isfinite(objectives)):
        raise ValueError("objectives must be finite for non-dominated sorting")
    matrix = _domination_matrix(objectives, violations)
    dominated_by = matrix.sum(axis=0)
    remaining = np.ones(n, dtype=bool)
    fronts: list[np.ndarray] = []
    while remaining.any():
        current = remaining & (dominated_by == 0)
        indices = np.flatnonzero(current)
        fronts.append(indices)
        dominated_by = dominated_by - matrix[indices].sum(axis=0)
        remaining &= ~current
    return fronts


def crowding_distance(objectives: np.ndarray) -> np.ndarray:
    """Crowding distance of each member of one front.

    Per objective the front is sorted; boundary members receive +inf and
    interior members accumulate the normalized gap between their
    neighbours.  An objective with zero range contributes nothing.

    Args:
        objectives: Front objectives, shape (k, m).

    Returns:
        Distances, shape (k,).
    """
    objectives = np.atleast_2d(np.asarray(objectives, dtype=float))
    k = objectives.shape[0]
    distance = np.zeros(k)
    if k <= 2:
        return np.full(k, np.inf)
    for column in objectives.T:
        order = np.argsort(column, kind="stable")
        distance[order[0]] = np.inf
        distance[order[-1]] = np.inf
        span = column[order[-1]] - column[order[0]]
        if span == 0.0:
            continue
        interior = order[1:-1]
        distance[interior] += (column[order[2:]] - column[order[:-2]]) / span
    return distance


def sbx_crossover(
    parent1: np.ndarray,
    parent2: np.ndarray,
    eta: float,
    bounds: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulated binary crossover of two continuous vectors.

    Each variable draws its own spread factor; the offspring pair is
    mean-preserving before clipping to the bounds.

    Args:
        parent1: First parent, shape (C,).
        parent2: Second parent, shape (C,).
        eta: Distribution index (larger concentrates near the parents).
        bounds: Per-variable bounds, shape (C, 2).
        rng: Random stream.

    Returns:
        Two offspring vectors within bounds.
    """
    parent1 = np.asarray(parent1, dtype=float)
    parent2 = np.asarray(parent2, dtype=float)
    if parent1.size == 0:
        return parent1.copy(), parent2.copy()
    u = rng.random(parent1.size)
    exponent = 1.0 / (eta + 1.0)
    beta = np.where(u <= 0.5, (2.0 * u) ** exponent,
                    (0.5 / (1.0 - u)) ** exponent)
    child1 = 0.5 * ((1.0 + beta) * parent1 + (1.0 - beta) * parent2)
    child2 = 0.5 * ((1.0 - beta) * parent1 + (1.0 + beta) * parent2)
    lo, hi = bounds[:, 0], bounds[:, 1]
    return np.clip(child1, lo, hi), np.clip(child2, lo, hi)


def polynomial_mutation(
    values: np.ndarray,
    eta: float,
    bounds: np.ndarray,
    prob: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Polynomial mutation of a continuous vector.

    Each variable mutates independently with probability ``prob``; the
    perturbation is a polynomially distributed fraction of the variable's
    full range, clipped to the bounds.

    Args:
        values: Continuous vector, shape (C,).
        eta: Distribution index.
        bounds: Per-variable bounds, shape (C, 2).
        prob: Per-variable mutation probability.
        rng: Random stream.

    Returns:
        Mutated vector within bounds.
    """
    values = np.asarray(values, dtype=float).copy()
    if values.size == 0:
        return values
    select = rng.random(values.size) < prob
    u = rng.random(values.size)
    exponent = 1.0 / (eta + 1.0)
    delta = np.where(u < 0.5, (2.0 * u) ** exponent - 1.0,
                     1.0 - (2.0 * (1.0 - u)) ** exponent)
    span = bounds[:, 1] - bounds[:, 0]
    values[select] += delta[select] * span[select]
    return np.clip(values, bounds[:, 0], bounds[:, 1])


def onepoint_crossover_cat(
    parent1: np.ndarray,
    parent2: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """One-point crossover of two categorical vectors.

    A cut point p is drawn uniformly from 1..M-1; the leading p entries
    and the remainder are swapped between the parents.  With fewer than
    two variables there is no valid cut point and the parents are copied.

    Args:
        parent1: First parent's level indices, shape (K,).
        parent2: Second parent's level indices, shape (K,).
        rng: Random stream.

    Returns:
        Two offspring vectors.
    """
    parent1 = np.asarray(parent1, dtype=int)
    parent2 = np.asarray(parent2, dtype=int)
    m = parent1.size
    if m < 2:
        return parent1.copy(), parent2.copy()
    cut = int(rng.integers(1, m))
    child1 = np.concatenate([parent1[:cut], parent2[cut:]])
    child2 = np.concatenate([parent2[:cut], parent1[cut:]])
    return child1, child2


def random_mutation_cat(
    values: np.ndarray,
    counts: Sequence[int],
    prob: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform reset mutation of a categorical vector.

    Each variable mutates independently with probability ``prob``; a
    mutated variable never keeps its level and draws uniformly among the
    remaining ones.  Single-level variables have no alternative and stay
    unchanged.

    Args:
        values: Level indices, shape (K,).
        counts: Level count per variable.
        prob: Per-variable mutation probability.
        rng: Random stream.

    Returns:
        Mutated vector.
    """
    values = np.asarray(values, dtype=int).copy()
    for j, levels in enumerate(counts):
        if rng.random() < prob and levels >= 2:
            shift = int(rng.integers(1, levels))
            values[j] = (values[j] + shift) % levels
    return values


def _initial_population(
    spec: ProblemSpec, config: GaConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Space-filling continuous sample plus uniform categorical levels."""
    size = config.population
    bounds = spec.continuous_bounds()
    if spec.n_continuous:
        unit = lhs_sample(size, spec.n_continuous,
                          seed=config.seed * _SEED_MIX + _STREAM_INIT).points
        con = bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])
    else:
        con = np.zeros((size, 0))
    rng = stream(config.seed, _STREAM_INIT)
    counts = spec.categorical_counts()
    if counts:
        cat = np.column_stack([rng.integers(0, b, size) for b in counts])
    else:
        cat = np.zeros((size, 0), dtype=int)
    return con, cat


def _tournament(
    rank: np.ndarray,
    crowding: np.ndarray,
    rng: np.random.Generator,
    n_winners: int,
) -> np.ndarray:
    """Binary tournament on (rank, crowding); ties keep the first entrant."""
    n = rank.size
    a = rng.integers(0, n, n_winners)
    b = rng.integers(0, n, n_winners)
    b_wins = (rank[b] < rank[a]) | ((rank[b] == rank[a]) & (crowding[b] > crowding[a]))
    return np.where(b_wins, b, a)


def _rank_and_crowding(
    objectives: np.ndarray, violations: np.ndarray
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    fronts = nondominated_sort(objectives, violations)
    rank = np.empty(objectives.shape[0], dtype=int)
    crowding = np.empty(objectives.shape[0])
    for level, front in enumerate(fronts, start=1):
        rank[front] = level
        crowding[front] = crowding_distance(objectives[front])
    return rank, crowding, fronts


def run_nsga2(
    objective_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    spec: ProblemSpec,
    config: GaConfig,
    history_path: str | None = None,
) -> GaResult:
    """Run NSGA-II over a problem's design space.

    Args:
        objective_fn: Deterministic batch map ``(con (L, C), cat (L, K))
            -> objectives (L, m)``.
        spec: Problem specification supplying bounds, levels, and design
            constraints.
        config: Algorithm settings.
        history_path: Optional CSV path receiving one row per generation
            (generation, hypervolume, feasible fraction).

    Returns:
        Final population with its best non-dominated set.
    """
    size = config.population
    bounds = spec.continuous_bounds()
    counts = spec.categorical_counts()
    n_vars = spec.n_continuous + spec.n_categorical
    mut_prob = (config.mutation_prob if config.mutation_prob is not None
                else 1.0 / max(n_vars, 1))

    con, cat = _initial_population(spec, config)
    objectives = _evaluate_batch(objective_fn, con, cat)
    violations = constraint_violations(spec, con, cat).sum(axis=1)
    if np.all(violations > 0.0):
        warnings.warn("initial population is entirely infeasible; "
                      "continuing on violation ordering", stacklevel=2)
    rank, crowding, fronts = _rank_and_crowding(objectives, violations)

    history: list[dict] = []
    reference: np.ndarray | None = None
    hv_prev: float | None = None
    streak = 0
    converged = False
    generations = 0

    for gen in range(1, config.max_generations + 1):
        generations = gen
        parents = _tournament(rank, crowding, stream(config.seed, _STREAM_TOURNAMENT, gen), size)
        child_con = np.empty_like(con)
        child_cat = np.empty_like(cat)
        for pair in range(size // 2):
            i, j = parents[2 * pair], parents[2 * pair + 1]
            rng = stream(config.seed, _STREAM_VARIATION, gen, pair)
            if rng.random() < config.p_crossover:
                c1, c2 = sbx_crossover(con[i], con[j], config.eta_crossover, bounds, rng)
                k1, k2 = onepoint_crossover_cat(cat[i], cat[j], rng)
            else:
                c1, c2 = con[i].copy(), con[j].copy()
                k1, k2 = cat[i].copy(), cat[j].copy()
            child_con[2 * pair] = polynomial_mutation(c1, config.eta_mutation, bounds, mut_prob, rng)
            child_con[2 * pair + 1] = polynomial_mutation(c2, config.eta_mutation, bounds, mut_prob, rng)
            child_cat[2 * pair] = random_mutation_cat(k1, counts, mut_prob, rng)
            child_cat[2 * pair + 1] = random_mutation_cat(k2, counts, mut_prob, rng)

        child_obj = _evaluate_batch(objective_fn, child_con, child_cat)
        child_viol = constraint_violations(spec, child_con, child_cat).sum(axis=1)

        all_con = np.vstack([con, child_con])
        all_cat = np.vstack([cat, child_cat])
        all_obj = np.vstack([objectives, child_obj])
        all_viol = np.concatenate([violations, child_viol])
        all_rank, all_crowd, all_fronts = _rank_and_crowding(all_obj, all_viol)
        combined_front_size = int(all_fronts[0].size)

        chosen: list[np.ndarray] = []
        taken = 0
        for front in all_fronts:
            if taken + front.size <= size:
                chosen.append(front)
                taken += front.size
            else:
                order = np.argsort(-all_crowd[front], kind="stable")
                chosen.append(front[order[: size - taken]])
                taken = size
            if taken == size:
                break
        survivors = np.concatenate(chosen)
        con, cat = all_con[survivors], all_cat[survivors]
        objectives, violations = all_obj[survivors], all_viol[survivors]
        rank, crowding = all_rank[survivors], all_crowd[survivors]

        feasible_fraction = float(np.mean(violations <= 0.0))
        hv = float("nan")
        if spec.n_objectives == 2:
            front_objs = objectives[rank == 1]
            front = Front2D.from_points(front_objs)
            if front.size:
                if reference is None:
                    nadir = nadir_point(front)
                    ideal = np.min(front.points, axis=0)
                    margin = np.maximum(0.1 * (nadir - ideal),
                                        1e-9 * np.maximum(1.0, np.abs(nadir)))
                    reference = nadir + margin
                hv = hypervolume_2d(front, reference)
                if hv_prev is not None:
                    relative = abs(hv - hv_prev) / max(abs(hv_prev), 1e-300)
                    streak = streak + 1 if relative < HV_REL_TOL else 0
                hv_prev = hv
        # While the combined rank-1 front fits in the population, survival
        # keeps it whole and the hypervolume cannot decrease; beyond that,
        # crowding truncation may discard non-dominated boundary area.
        history.append({"generation": gen, "hypervolume": hv,
                        "feasible_fraction": feasible_fraction,
                        "combined_front_size": combined_front_size})
        if streak >= HV_WINDOW:
            converged = True
            break

    if history_path is not None:
        with open(history_path, "w", newline="") as handle:
            writer = csv.DictWriter(
                handle, fieldnames=["generation", "hypervolume", "feasible_fraction"],
                extrasaction="ignore")
            writer.writeheader()
            writer.writerows(history)

    front_indices = np.flatnonzero(rank == 1)
    return GaResult(con=con, cat=cat, objectives=objectives, violations=violations,
                    front_indices=front_indices, generations=generations,
                    converged=converged, history=history)


def _evaluate_batch(
    objective_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    con: np.ndarray,
    cat: np.ndarray,
) -> np.ndarray:
    objectives = np.atleast_2d(np.asarray(objective_fn(con, cat), dtype=float))
    if objectives.shape[0] != con.shape[0]:
        raise ValueError("objective function returned the wrong number of rows")
    if not np.all(np.isfinite(objectives)):
        raise ValueError("objective function returned non-finite values")
    return objectives
