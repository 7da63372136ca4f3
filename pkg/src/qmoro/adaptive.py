"""Sequential surrogate-assisted loop for quantile-robust optimization.

One cycle trains per-objective Kriging surrogates of the cost functions on an
experimental design in the augmented design-plus-random space, runs the
genetic optimizer on surrogate-based quantiles, scores the accuracy of every
Pareto point from the surrogate variance, and — until the accuracy target is
met — enriches the experimental design with a small batch of true-model
evaluations placed where the surrogate is weakest.  An optional outer
surrogate of the quantile surfaces over the plain design space accelerates
the optimizer.

All randomness is derived from the run seed, the purpose and the cycle
index, which makes a run reproducible bit-for-bit and resumable from a
checkpoint written after every cycle.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .cluster import kmeans_mixed, representatives
from .kriging import (
    ExperimentalDesign,
    KrigingConfig,
    KrigingModel,
    SharedTailKernel,
    calibrate,
    find_duplicates,
    predict,
)
from .moga import GaConfig, nondominated_sort, run_nsga2
from .problem import EvalCounter, ObjectiveModel, ProblemSpec, evaluate
from .sampling import (
    CrnContext,
    conditional_inverse_cdf,
    empirical_quantile,
    inverse_cdf,
    lhs_sample,
)

_STREAM_INITIAL = 41
_STREAM_GA = 42
_STREAM_OUTER = 43
_STREAM_CALIBRATE_INNER = 44
_STREAM_CALIBRATE_OUTER = 45
_STREAM_KMEANS = 46

_CONFIDENCE = 1.96
_DENOMINATOR_GUARD = 1e-6

CHECKPOINT_FORMAT = "qmoro-checkpoint"
CHECKPOINT_VERSION = 1


def _derive_seed(seed: int, *path: int) -> int:
    """Independent integer seed for one purpose of one cycle."""
    entropy = (int(seed),) + tuple(int(p) for p in path)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


# --- augmented space -------------------------------------------------------


@dataclass(frozen=True)
class AugmentedSpace:
    """Box the inner surrogate is trained on.

    The design part widens each noisy continuous variable's interval to the
    two-sided confidence range of its noise distribution at the design
    bounds; deterministic variables keep their design interval, so without
    design noise the design part equals the design space.  The environmental
    part truncates each unbounded distribution to central quantiles and uses
    exact support bounds for uniform variables.

    Args:
        design_bounds: Per-continuous-design-variable interval, shape (C, 2).
        env_bounds: Per-environmental-variable interval, shape (M_z, 2).
        cat_counts: Level count per categorical design variable.
    """

    design_bounds: np.ndarray
    env_bounds: np.ndarray
    cat_counts: tuple[int, ...]

    @property
    def bounds(self) -> np.ndarray:
        """Bounds of all continuous surrogate inputs, design part first."""
        if self.env_bounds.size:
            return np.vstack([self.design_bounds, self.env_bounds])
        return self.design_bounds

    @property
    def n_continuous(self) -> int:
        return self.bounds.shape[0]

    @property
    def n_dims(self) -> int:
        return self.n_continuous + len(self.cat_counts)


def build_augmented_space(
    spec: ProblemSpec,
    alpha_design: float = 0.975,
    env_truncation: float = 1e-5,
) -> AugmentedSpace:
    """Build the training box for the inner surrogate.

    Args:
        spec: Problem specification.
        alpha_design: Per-side confidence level for widening noisy design
            variables; the lower edge uses the ``1 - alpha_design`` quantile
            of the noise at the lower design bound, the upper edge the
            ``alpha_design`` quantile at the upper bound.
        env_truncation: Tail mass cut from each side of unbounded
            environmental distributions.

    Returns:
        The augmented space.
    """
    if not 0.5 < alpha_design < 1.0:
        raise ValueError("alpha_design must lie in (0.5, 1)")
    if not 0.0 < env_truncation < 0.5:
        raise ValueError("env_truncation must lie in (0, 0.5)")
    noise = spec.design_noise or (None,) * spec.n_continuous
    design = np.empty((spec.n_continuous, 2))
    for i, (var, dist) in enumerate(zip(spec.continuous, noise)):
        if dist is None:
            design[i] = (var.lower, var.upper)
        else:
            design[i, 0] = conditional_inverse_cdf(dist, var.lower, 1.0 - alpha_design)
            design[i, 1] = conditional_inverse_cdf(dist, var.upper, alpha_design)
    env = np.empty((spec.n_environmental, 2))
    for j, dist in enumerate(spec.environmental):
        if dist.family == "uniform":
            env[j] = (dist.param1, dist.param2)
        else:
            env[j, 0] = inverse_cdf(dist, env_truncation)
            env[j, 1] = inverse_cdf(dist, 1.0 - env_truncation)
    return AugmentedSpace(
        design_bounds=design, env_bounds=env, cat_counts=spec.categorical_counts()
    )


def initial_design(space: AugmentedSpace, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Space-filling sample of the augmented space.

    Continuous columns come from one Latin hypercube draw; categorical
    columns reuse further hypercube columns through equal-width level
    binning, which keeps the level counts balanced.

    Args:
        space: Augmented space to sample.
        n: Number of points (>= 2).
        seed: Derived stream seed.

    Returns:
        ``(con, cat)`` arrays of shapes (n, C) and (n, K).
    """
    unit = lhs_sample(n, space.n_dims, seed).points
    bounds = space.bounds
    con = bounds[:, 0] + unit[:, : space.n_continuous] * (bounds[:, 1] - bounds[:, 0])
    if space.cat_counts:
        cat = np.column_stack([
            np.floor(unit[:, space.n_continuous + j] * b).astype(int)
            for j, b in enumerate(space.cat_counts)
        ])
    else:
        cat = np.zeros((n, 0), dtype=int)
    return con, cat


# --- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class AdaptiveConfig:
    """Settings of the adaptive loop.

    Args:
        eta_target: Convergence target for the worst relative quantile error.
        threshold_schedule: Loosen the threshold in early cycles
            (``max(target, 10 * target * 2**(1 - cycle))``) instead of
            holding it fixed at the target.
        enrichment_size: True-model evaluations added per cycle; defaults to
            twice the number of objectives.
        n_samples: Monte Carlo sample count N per quantile.
        initial_multiplier: Initial experimental design holds ``multiplier *
            M`` points, with M the number of augmented-space variables.
        population: Population size of the genetic optimizer.
        generation_step: Generation cap grows by this much per cycle.
        generation_cap: Upper bound of the generation cap.
        max_cycles: Hard cycle cap; reaching it flags the run non-converged.
        outer_surrogate: Fit per-objective quantile surrogates over the
            design space for the optimizer to use.
        outer_initial: Initial space-filling size of the outer design.
        outer_step: Growth of the outer design whenever the outer error
            exceeds its tolerance.
        outer_tolerance: Outer-vs-inner relative quantile error tolerance.
        outer_restarts: Calibration restarts for the outer surrogates.
        alpha_design: Per-side confidence level widening the design box.
        env_truncation: Tail mass cut from unbounded environmental variables.
        kriging_restarts: Calibration restarts for the inner surrogates.
        threads: Worker threads for true-model evaluation batches.
        seed: Run seed; every algorithmic random decision derives from it.
        crn_seed: Seed of the frozen Monte Carlo draw that defines the
            quantile objectives.  Kept separate from ``seed`` so repeated
            runs vary the algorithm's randomness while optimizing the same
            empirical quantile map; the shipped reference fronts use draw 0.
    """

    eta_target: float = 0.03
    threshold_schedule: bool = True
    enrichment_size: int | None = None
    n_samples: int = 5000
    initial_multiplier: int = 3
    population: int = 100
    generation_step: int = 10
    generation_cap: int = 100
    max_cycles: int = 100
    outer_surrogate: bool = True
    outer_initial: int = 200
    outer_step: int = 100
    outer_tolerance: float = 0.05
    outer_restarts: int = 3
    alpha_design: float = 0.975
    env_truncation: float = 1e-5
    kriging_restarts: int = 10
    threads: int = 1
    seed: int = 0
    crn_seed: int = 0

    def __post_init__(self) -> None:
        if self.eta_target <= 0:
            raise ValueError("eta_target must be positive")
        if self.enrichment_size is not None and self.enrichment_size < 1:
            raise ValueError("enrichment_size must be >= 1")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.initial_multiplier < 1:
            raise ValueError("initial_multiplier must be >= 1")
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if self.generation_step < 1 or self.generation_cap < self.generation_step:
            raise ValueError("generation schedule must satisfy 1 <= step <= cap")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")
        if min(self.outer_initial, self.outer_step, self.outer_restarts) < 1:
            raise ValueError("outer surrogate sizes must be >= 1")
        if self.outer_tolerance <= 0:
            raise ValueError("outer_tolerance must be positive")
        if self.kriging_restarts < 1:
            raise ValueError("kriging_restarts must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.seed < 0 or self.crn_seed < 0:
            raise ValueError("seeds must be nonnegative")

    def threshold(self, cycle: int) -> float:
        """Accuracy threshold in effect at a given cycle (1-based)."""
        if not self.threshold_schedule:
            return self.eta_target
        return max(self.eta_target, 10.0 * self.eta_target * 2.0 ** (1 - cycle))


# --- surrogate-based quantiles and accuracy --------------------------------


def _predict_pair(
    surrogate: Any, con: np.ndarray, cat: np.ndarray, with_variance: bool
) -> tuple[np.ndarray, np.ndarray | None]:
    """Mean and standard deviation of one surrogate on a batch.

    A surrogate is either a calibrated Kriging model or any callable
    ``fn(con, cat) -> (mean, sigma)`` returning arrays.
    """
    if isinstance(surrogate, KrigingModel):
        mean, variance = predict(surrogate, con, cat, with_variance=with_variance)
        sigma = np.sqrt(variance) if with_variance else None
        return mean, sigma
    mean, sigma = surrogate(con, cat)
    mean = np.asarray(mean, dtype=float).ravel()
    if not with_variance:
        return mean, None
    return mean, np.asarray(sigma, dtype=float).ravel()


@dataclass(frozen=True)
class AccuracyReport:
    """Accuracy of the surrogate quantiles over one Pareto front.

    Args:
        eta: Relative quantile errors, shape (n, m), all nonnegative.
        outliers: Interdecile-rule outlier mask, shape (n, m).
        quantiles: Surrogate quantiles of the front designs, shape (n, m).
        worst: Largest non-outlier error per objective, shape (m,).
        threshold: Accuracy threshold the report was judged against.
    """

    eta: np.ndarray
    outliers: np.ndarray
    quantiles: np.ndarray
    worst: np.ndarray
    threshold: float

    @property
    def converged(self) -> bool:
        return bool(np.all(self.worst <= self.threshold))

    @property
    def outlier_rows(self) -> np.ndarray:
        """Rows flagged as outliers in at least one objective."""
        return np.any(self.outliers, axis=1)


def filter_outliers(values: np.ndarray) -> np.ndarray:
    """Flag values above the interdecile outlier fence.

    A value is an outlier iff it exceeds ``p90 + 1.5 * (p90 - p10)``
    strictly, with both percentiles taken by the package's empirical
    quantile convention.  Degenerate spreads therefore flag nothing, and a
    single value is never an outlier.

    Args:
        values: One-dimensional array of nonnegative errors.

    Returns:
        Boolean mask, True marking outliers.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("cannot filter an empty set of values")
    p90 = empirical_quantile(values, 0.9)
    p10 = empirical_quantile(values, 0.1)
    return values > p90 + 1.5 * (p90 - p10)


class SurrogateQuantiles:
    """Quantiles and accuracy measures of surrogates over conditional samples.

    For problems without design noise the environmental block is the same
    for every design, so Kriging predictions use a shared-tail factorization
    of the kernel; otherwise the conditional points are realized per design.
    Quantile vectors are cached per design, making repeated designs free.

    Args:
        surrogates: One surrogate per objective (Kriging models or callables
            as accepted by the predictor adapter).
        spec: Problem specification.
        crn: Frozen common-random-numbers context.
    """

    def __init__(self, surrogates: Sequence[Any], spec: ProblemSpec, crn: CrnContext):
        self.surrogates = tuple(surrogates)
        if len(self.surrogates) != spec.n_objectives:
            raise ValueError("need exactly one surrogate per objective")
        self.spec = spec
        self.crn = crn
        self._cache: dict[tuple[bytes, bytes], np.ndarray] = {}
        self._tails: list[SharedTailKernel] | None = None
        if (
            not spec.has_design_noise
            and spec.n_environmental
            and all(isinstance(s, KrigingModel) for s in self.surrogates)
        ):
            self._tails = [
                SharedTailKernel(s, crn.env_realizations) for s in self.surrogates
            ]

    def _mu_sigma(
        self, d_con: np.ndarray, d_cat: np.ndarray, with_variance: bool
    ) -> list[tuple[np.ndarray, np.ndarray | None]]:
        """Per-objective surrogate mean (and sigma) over one design's samples."""
        if self._tails is not None:
            pairs = []
            for tail in self._tails:
                mean, variance = tail.predict_design(d_con, d_cat, with_variance)
                sigma = np.sqrt(variance) if with_variance else None
                pairs.append((mean, sigma))
            return pairs
        con, cat = self.crn.conditional_points(self.spec, d_con, d_cat)
        return [
            _predict_pair(s, con, cat, with_variance) for s in self.surrogates
        ]

    def quantiles(self, con: np.ndarray, cat: np.ndarray) -> np.ndarray:
        """Surrogate cost quantiles for a batch of designs.

        Args:
            con: Continuous design coordinates, shape (L, M_con).
            cat: Categorical level indices, shape (L, M_cat).

        Returns:
            Array of shape (L, m).
        """
        con = np.atleast_2d(np.asarray(con, dtype=float))
        cat = np.atleast_2d(np.asarray(cat, dtype=int))
        alpha = self.spec.alpha
        out = np.empty((con.shape[0], self.spec.n_objectives))
        for i in range(con.shape[0]):
            key = (con[i].tobytes(), cat[i].tobytes())
            hit = self._cache.get(key)
            if hit is None:
                pairs = self._mu_sigma(con[i], cat[i], with_variance=False)
                hit = np.array([
                    empirical_quantile(mean, alpha[k])
                    for k, (mean, _) in enumerate(pairs)
                ])
                self._cache[key] = hit
            out[i] = hit
        return out

    def accuracy(
        self,
        front_con: np.ndarray,
        front_cat: np.ndarray,
        threshold: float,
        guard_scales: np.ndarray,
    ) -> AccuracyReport:
        """Score the surrogate accuracy at every front design.

        For each design and objective the quantile is computed three times
        over the conditional samples: from the predicted mean and from the
        mean shifted by +-1.96 standard deviations.  The spread of the two
        shifted quantiles relative to the central one is the error; designs
        whose quantile is nearly zero are normalized by the initial-design
        response scale instead.

        Args:
            front_con: Front designs, continuous part, shape (n, M_con).
            front_cat: Front designs, categorical part, shape (n, M_cat).
            threshold: Accuracy threshold for this cycle.
            guard_scales: Per-objective response standard deviation of the
                initial experimental design.

        Returns:
            The accuracy report.
        """
        front_con = np.atleast_2d(np.asarray(front_con, dtype=float))
        front_cat = np.atleast_2d(np.asarray(front_cat, dtype=int))
        n = front_con.shape[0]
        if n == 0:
            raise ValueError("cannot score an empty front")
        m = self.spec.n_objectives
        alpha = self.spec.alpha
        eta = np.empty((n, m))
        quantiles = np.empty((n, m))
        for i in range(n):
            pairs = self._mu_sigma(front_con[i], front_cat[i], with_variance=True)
            for k, (mean, sigma) in enumerate(pairs):
                q = empirical_quantile(mean, alpha[k])
                upper = empirical_quantile(mean + _CONFIDENCE * sigma, alpha[k])
                lower = empirical_quantile(mean - _CONFIDENCE * sigma, alpha[k])
                scale = float(guard_scales[k])
                if abs(q) >= _DENOMINATOR_GUARD * scale and q != 0.0:
                    denominator = abs(q)
                else:
                    denominator = scale if scale > 0.0 else 1.0
                eta[i, k] = (upper - lower) / denominator
                quantiles[i, k] = q
            self._cache.setdefault(
                (front_con[i].tobytes(), front_cat[i].tobytes()), quantiles[i].copy()
            )
        outliers = np.column_stack([filter_outliers(eta[:, k]) for k in range(m)])
        worst = np.array([
            eta[~outliers[:, k], k].max() if np.any(~outliers[:, k]) else eta[:, k].max()
            for k in range(m)
        ])
        return AccuracyReport(
            eta=eta, outliers=outliers, quantiles=quantiles, worst=worst,
            threshold=float(threshold),
        )


# --- enrichment ------------------------------------------------------------


def select_enrichment(
    front_con: np.ndarray,
    front_cat: np.ndarray,
    report: AccuracyReport,
    engine: SurrogateQuantiles,
    batch_size: int,
    ed: ExperimentalDesign,
    space: AugmentedSpace,
    seed: int,
    cycle: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Choose up to ``batch_size`` augmented points for true-model evaluation.

    The first set takes, for each objective failing the threshold, the
    highest-variance conditional sample of the design with the largest
    non-outlier error.  The second set clusters all designs exceeding the
    threshold (by the mixed-variable distance) into the remaining budget and
    adds each cluster representative's highest-variance sample under its
    worst objective.  Points duplicating the experimental design or one
    another are replaced by the next-best variance sample; if fewer failing
    designs exist than budget, fewer points are returned.

    Args:
        front_con: Front designs, continuous part.
        front_cat: Front designs, categorical part.
        report: Accuracy report for these designs.
        engine: Surrogate quantile engine of the current cycle.
        batch_size: Total budget K.
        ed: Current experimental design (for duplicate rejection).
        space: Augmented space (for normalized duplicate tolerance).
        seed: Run seed.
        cycle: Cycle index (keys the clustering stream).

    Returns:
        ``(con, cat)`` augmented-space rows, at most ``batch_size`` of them.
    """
    front_con = np.atleast_2d(np.asarray(front_con, dtype=float))
    front_cat = np.atleast_2d(np.asarray(front_cat, dtype=int))
    m = report.eta.shape[1]
    failing = [k for k in range(m) if report.worst[k] > report.threshold]
    if not failing:
        return (
            np.zeros((0, space.n_continuous)),
            np.zeros((0, len(space.cat_counts)), dtype=int),
        )
    chosen_con: list[np.ndarray] = []
    chosen_cat: list[np.ndarray] = []

    def claim(d_con: np.ndarray, d_cat: np.ndarray, objective: int) -> None:
        """Claim the best not-yet-taken variance sample of one design."""
        con, cat = engine.crn.conditional_points(engine.spec, d_con, d_cat)
        _, sigma = engine._mu_sigma(d_con, d_cat, with_variance=True)[objective]
        order = np.argsort(-sigma, kind="stable")
        ref_con = np.vstack([ed.con] + chosen_con) if chosen_con else ed.con
        ref_cat = np.vstack([ed.cat] + chosen_cat) if chosen_cat else ed.cat
        for idx in order:
            duplicate = find_duplicates(
                con[idx : idx + 1], cat[idx : idx + 1], space.bounds,
                against_con=ref_con, against_cat=ref_cat,
            )[0]
            if not duplicate:
                chosen_con.append(con[idx : idx + 1])
                chosen_cat.append(cat[idx : idx + 1])
                return

    for k in failing:
        eligible = ~report.outliers[:, k]
        if not np.any(eligible):
            eligible = np.ones(report.eta.shape[0], dtype=bool)
        rows = np.flatnonzero(eligible)
        worst_row = rows[int(np.argmax(report.eta[rows, k]))]
        claim(front_con[worst_row], front_cat[worst_row], k)

    remaining = batch_size - len(failing)
    if remaining > 0:
        over = np.flatnonzero(np.any(report.eta > report.threshold, axis=1))
        if over.size:
            distinct = len({
                (front_con[i].tobytes(), front_cat[i].tobytes()) for i in over
            })
            k_clusters = min(remaining, distinct)
            ranges = space.design_bounds[:, 1] - space.design_bounds[:, 0]
            clustering = kmeans_mixed(
                front_con[over], front_cat[over], k_clusters, ranges,
                seed=_derive_seed(seed, _STREAM_KMEANS, cycle),
            )
            reps = representatives(clustering, front_con[over], front_cat[over], ranges)
            for local in reps:
                row = over[int(local)]
                objective = int(np.argmax(report.eta[row]))
                claim(front_con[row], front_cat[row], objective)

    if not chosen_con:
        return (
            np.zeros((0, space.n_continuous)),
            np.zeros((0, len(space.cat_counts)), dtype=int),
        )
    return np.vstack(chosen_con), np.vstack(chosen_cat)


# --- outer surrogate -------------------------------------------------------


@dataclass(frozen=True)
class OuterSurrogate:
    """Per-objective quantile surrogates over the plain design space.

    Args:
        models: One Kriging model per objective, mapping a design to its
            predicted cost quantile.
        ed_con: Design-space training inputs, continuous part.
        ed_cat: Design-space training inputs, categorical part.
        responses: Inner-surrogate quantiles at the training designs.
        size: Space-filling portion of the training design.
    """

    models: tuple[KrigingModel, ...]
    ed_con: np.ndarray
    ed_cat: np.ndarray
    responses: np.ndarray
    size: int

    def predict_quantiles(self, con: np.ndarray, cat: np.ndarray) -> np.ndarray:
        """Predicted quantile vectors for a batch of designs."""
        return np.column_stack([
            predict(model, con, cat, with_variance=False)[0] for model in self.models
        ])


def build_outer_surrogate(
    engine: SurrogateQuantiles,
    spec: ProblemSpec,
    size: int,
    previous_front: tuple[np.ndarray, np.ndarray] | None,
    seed: int,
    cycle: int,
    restarts: int = 3,
    warm_start: Sequence[np.ndarray | None] | None = None,
) -> OuterSurrogate:
    """Fit the optimizer-facing quantile surrogates for one cycle.

    The training design is one space-filling sample of the design space plus
    the previous cycle's Pareto designs (duplicates dropped); responses are
    the inner surrogate's quantiles.

    Args:
        engine: Inner surrogate quantile engine.
        spec: Problem specification.
        size: Space-filling sample size.
        previous_front: Designs of the previous cycle's front, or ``None``
            on the first cycle.
        seed: Run seed.
        cycle: Cycle index (keys the sampling and calibration streams).
        restarts: Calibration restarts.
        warm_start: Previous cycle's lengthscales per objective.

    Returns:
        The fitted outer surrogate.
    """
    design_space = AugmentedSpace(
        design_bounds=spec.continuous_bounds(),
        env_bounds=np.zeros((0, 2)),
        cat_counts=spec.categorical_counts(),
    )
    con, cat = initial_design(
        design_space, size, _derive_seed(seed, _STREAM_OUTER, cycle, size)
    )
    if previous_front is not None and len(previous_front[0]):
        extra_con = np.atleast_2d(np.asarray(previous_front[0], dtype=float))
        extra_cat = np.atleast_2d(np.asarray(previous_front[1], dtype=int))
        keep = ~find_duplicates(
            extra_con, extra_cat, design_space.bounds,
            against_con=con, against_cat=cat,
        )
        con = np.vstack([con, extra_con[keep]])
        cat = np.vstack([cat, extra_cat[keep]])
    responses = engine.quantiles(con, cat)
    warm = warm_start or [None] * spec.n_objectives
    models = tuple(
        calibrate(
            con, cat, responses[:, k], design_space.bounds,
            cat_counts=design_space.cat_counts,
            config=KrigingConfig(n_restarts=_restart_count(restarts, warm[k])),
            seed=_derive_seed(seed, _STREAM_CALIBRATE_OUTER, cycle, k),
            warm_start=warm[k],
        )
        for k in range(spec.n_objectives)
    )
    return OuterSurrogate(
        models=models, ed_con=con, ed_cat=cat, responses=responses, size=size
    )


def outer_error(
    inner_quantiles: np.ndarray,
    outer_quantiles: np.ndarray,
    guard_scales: np.ndarray,
) -> np.ndarray:
    """Worst relative gap between outer and inner quantiles over a front.

    Args:
        inner_quantiles: Inner-surrogate quantiles of the front designs,
            shape (n, m).
        outer_quantiles: Outer-surrogate predictions at the same designs,
            shape (n, m).
        guard_scales: Per-objective substitute normalizers for near-zero
            quantiles.

    Returns:
        Per-objective maxima, shape (m,).
    """
    inner_quantiles = np.atleast_2d(np.asarray(inner_quantiles, dtype=float))
    outer_quantiles = np.atleast_2d(np.asarray(outer_quantiles, dtype=float))
    m = inner_quantiles.shape[1]
    out = np.empty(m)
    for k in range(m):
        inner = inner_quantiles[:, k]
        scale = float(guard_scales[k])
        denom = np.abs(inner)
        fallback = scale if scale > 0.0 else 1.0
        denom = np.where(denom >= _DENOMINATOR_GUARD * scale, denom, fallback)
        denom = np.where(denom == 0.0, fallback, denom)
        out[k] = float(np.max(np.abs(inner - outer_quantiles[:, k]) / denom))
    return out


# --- the loop --------------------------------------------------------------


Calibrator = Callable[[ExperimentalDesign, AugmentedSpace, int, Sequence[Any]], Sequence[Any]]


def _restart_count(base: int, warm: np.ndarray | None) -> int:
    """Random calibration restarts: full when cold, a third when warm.

    A warm start from the previous cycle already sits near the optimum, so
    most of the restart budget would be redundant; calibration dominates the
    cycle cost, and cutting warm-started restarts keeps runs fast without
    touching the first, cold fit.
    """
    if warm is None:
        return base
    return max(2, base // 3)


def _calibrate_inner(
    ed: ExperimentalDesign,
    space: AugmentedSpace,
    config: AdaptiveConfig,
    cycle: int,
    warm: Sequence[np.ndarray | None],
) -> list[KrigingModel]:
    """Default per-objective Kriging calibration on the augmented space."""
    return [
        calibrate(
            ed.con, ed.cat, ed.y[:, k], space.bounds,
            cat_counts=space.cat_counts,
            config=KrigingConfig(
                n_restarts=_restart_count(config.kriging_restarts, warm[k])
            ),
            seed=_derive_seed(config.seed, _STREAM_CALIBRATE_INNER, cycle, k),
            warm_start=warm[k],
        )
        for k in range(ed.y.shape[1])
    ]


def _evaluate_batch(
    model: ObjectiveModel,
    con: np.ndarray,
    cat: np.ndarray,
    counter: EvalCounter,
    threads: int,
) -> np.ndarray:
    """Evaluate true-model rows, optionally with a thread pool.

    Rows are independent, so the merged result is identical to one batch
    call regardless of worker count.
    """
    if threads <= 1 or con.shape[0] <= 1:
        return evaluate(model, con, cat, counter)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(evaluate, model, con[i : i + 1], cat[i : i + 1], counter)
            for i in range(con.shape[0])
        ]
        return np.vstack([f.result() for f in futures])


@dataclass(frozen=True)
class RunResult:
    """Outcome of one adaptive run.

    Args:
        front_con: Returned Pareto designs, continuous part.
        front_cat: Returned Pareto designs, categorical part.
        front_objectives: Inner-surrogate quantiles of those designs.
        cycles: Number of cycles executed.
        evaluations: Total true-model evaluations spent.
        converged: Whether the accuracy target was met.
        ed: Final experimental design in the augmented space.
        report: Accuracy report of the final cycle's full front.
        history: One mapping per cycle with the loop's progress figures.
    """

    front_con: np.ndarray
    front_cat: np.ndarray
    front_objectives: np.ndarray
    cycles: int
    evaluations: int
    converged: bool
    ed: ExperimentalDesign
    report: AccuracyReport
    history: tuple[dict, ...]


def _history_row(
    cycle: int,
    threshold: float,
    g_max: int,
    report: AccuracyReport,
    ed_size: int,
    evaluations: int,
    enriched: int,
    outer_size: int | None,
    eta_out: np.ndarray | None,
) -> dict:
    row = {
        "cycle": cycle,
        "threshold": threshold,
        "g_max": g_max,
        "front_size": int(report.eta.shape[0]),
        "ed_size": int(ed_size),
        "evaluations": int(evaluations),
        "enriched": int(enriched),
        "outer_size": int(outer_size) if outer_size is not None else 0,
    }
    for k in range(report.eta.shape[1]):
        row[f"worst_eta_{k + 1}"] = float(report.worst[k])
    if eta_out is not None:
        for k in range(eta_out.size):
            row[f"eta_out_{k + 1}"] = float(eta_out[k])
    return row


def _final_front(
    front_con: np.ndarray, front_cat: np.ndarray, report: AccuracyReport
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Drop outlier rows, then keep the mutually non-dominated remainder."""
    keep = ~report.outlier_rows
    if not np.any(keep):
        keep = np.ones(report.eta.shape[0], dtype=bool)
    con = front_con[keep]
    cat = front_cat[keep]
    objectives = report.quantiles[keep]
    first = nondominated_sort(objectives)[0]
    order = np.sort(first)
    return con[order], cat[order], objectives[order]


class _LoopState:
    """Mutable inter-cycle state, checkpointable as JSON."""

    def __init__(
        self,
        ed: ExperimentalDesign,
        evaluations: int,
        outer_size: int,
        warm: list[np.ndarray | None],
        outer_warm: list[np.ndarray | None],
        previous_front: tuple[np.ndarray, np.ndarray] | None,
        history: list[dict],
        next_cycle: int,
    ):
        self.ed = ed
        self.evaluations = evaluations
        self.outer_size = outer_size
        self.warm = warm
        self.outer_warm = outer_warm
        self.previous_front = previous_front
        self.history = history
        self.next_cycle = next_cycle

    def to_payload(
        self, config: AdaptiveConfig, spec: ProblemSpec, terminal: bool
    ) -> dict:
        def arrays(values):
            return [None if v is None else np.asarray(v).tolist() for v in values]

        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "problem": spec.name,
            "config": dataclasses.asdict(config),
            "terminal": terminal,
            "next_cycle": self.next_cycle,
            "evaluations": self.evaluations,
            "outer_size": self.outer_size,
            "ed": {
                "con": self.ed.con.tolist(),
                "cat": self.ed.cat.tolist(),
                "y": self.ed.y.tolist(),
            },
            "warm": arrays(self.warm),
            "outer_warm": arrays(self.outer_warm),
            "previous_front": None if self.previous_front is None else {
                "con": self.previous_front[0].tolist(),
                "cat": self.previous_front[1].tolist(),
            },
            "history": self.history,
        }

    @classmethod
    def from_payload(cls, payload: dict, spec: ProblemSpec) -> "_LoopState":
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a checkpoint: format={payload.get('format')!r}")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
        if payload.get("problem") != spec.name:
            raise ValueError(
                f"checkpoint belongs to problem {payload.get('problem')!r}, "
                f"not {spec.name!r}"
            )
        if payload.get("terminal"):
            raise ValueError(
                "checkpoint describes a finished run and cannot be resumed"
            )

        def arrays(values):
            return [None if v is None else np.asarray(v, dtype=float) for v in values]

        ed = ExperimentalDesign(
            con=np.asarray(payload["ed"]["con"], dtype=float).reshape(
                -1, spec.n_continuous + spec.n_environmental
            ),
            cat=np.asarray(payload["ed"]["cat"], dtype=int).reshape(
                -1, spec.n_categorical
            ),
            y=np.asarray(payload["ed"]["y"], dtype=float).reshape(
                -1, spec.n_objectives
            ),
        )
        previous = payload.get("previous_front")
        previous_front = None
        if previous is not None:
            previous_front = (
                np.asarray(previous["con"], dtype=float).reshape(-1, spec.n_continuous),
                np.asarray(previous["cat"], dtype=int).reshape(-1, spec.n_categorical),
            )
        return cls(
            ed=ed,
            evaluations=int(payload["evaluations"]),
            outer_size=int(payload["outer_size"]),
            warm=arrays(payload["warm"]),
            outer_warm=arrays(payload["outer_warm"]),
            previous_front=previous_front,
            history=list(payload["history"]),
            next_cycle=int(payload["next_cycle"]),
        )


def _check_resume_config(saved: dict, config: AdaptiveConfig) -> None:
    """Reject resumes whose settings would alter the continued trajectory."""
    current = dataclasses.asdict(config)
    ignore = {"max_cycles", "threads"}
    for key, value in current.items():
        if key in ignore:
            continue
        if saved.get(key) != value:
            raise ValueError(
                f"checkpoint was written with {key}={saved.get(key)!r}, "
                f"resume requested {key}={value!r}"
            )


def run(
    spec: ProblemSpec,
    model: ObjectiveModel,
    config: AdaptiveConfig = AdaptiveConfig(),
    calibrator: Calibrator | None = None,
    checkpoint_path: str | Path | None = None,
    resume_from: str | Path | dict | None = None,
) -> RunResult:
    """Run the adaptive surrogate loop on one problem.

    Args:
        spec: Problem specification.
        model: True cost model over the augmented space.
        config: Loop settings.
        calibrator: Optional replacement for the per-cycle surrogate fit,
            called as ``calibrator(ed, space, cycle, warm)``; used for
            testing with exact or degenerate surrogates.
        checkpoint_path: If given, the loop state is serialized there after
            every cycle.
        resume_from: Checkpoint path or payload to continue from; settings
            other than the cycle cap and thread count must match.

    Returns:
        The run result; ``converged`` is False when the cycle cap was hit or
        the enrichment stalled.
    """
    if spec.n_objectives != model.n_objectives:
        raise ValueError("specification and model disagree on objective count")
    m = spec.n_objectives
    batch_size = config.enrichment_size or 2 * m
    space = build_augmented_space(spec, config.alpha_design, config.env_truncation)
    crn = CrnContext.create(spec, n_samples=config.n_samples, seed=config.crn_seed)
    counter = EvalCounter()
    n_initial = config.initial_multiplier * spec.n_augmented_vars

    if resume_from is not None:
        payload = resume_from
        if not isinstance(payload, dict):
            payload = json.loads(Path(resume_from).read_text(encoding="utf-8"))
        _check_resume_config(payload["config"], config)
        state = _LoopState.from_payload(payload, spec)
        counter.add(state.evaluations)
    else:
        con0, cat0 = initial_design(
            space, n_initial, _derive_seed(config.seed, _STREAM_INITIAL)
        )
        y0 = _evaluate_batch(model, con0, cat0, counter, config.threads)
        state = _LoopState(
            ed=ExperimentalDesign(con0, cat0, y0),
            evaluations=counter.count,
            outer_size=config.outer_initial,
            warm=[None] * m,
            outer_warm=[None] * m,
            previous_front=None,
            history=[],
            next_cycle=1,
        )

    guard_scales = np.array([
        float(np.std(state.ed.y[:n_initial, k])) for k in range(m)
    ])

    report: AccuracyReport | None = None
    front_con = front_cat = None
    converged = False
    stalled = False
    cycle = state.next_cycle - 1

    for cycle in range(state.next_cycle, config.max_cycles + 1):
        surrogates = (
            calibrator(state.ed, space, cycle, state.warm)
            if calibrator is not None
            else _calibrate_inner(state.ed, space, config, cycle, state.warm)
        )
        state.warm = [
            s.theta.copy() if isinstance(s, KrigingModel) else None for s in surrogates
        ]
        engine = SurrogateQuantiles(surrogates, spec, crn)
        threshold = config.threshold(cycle)
        outer = None
        if config.outer_surrogate:
            outer = build_outer_surrogate(
                engine, spec, state.outer_size, state.previous_front,
                config.seed, cycle, restarts=config.outer_restarts,
                warm_start=state.outer_warm,
            )
            state.outer_warm = [mdl.theta.copy() for mdl in outer.models]
            ga_objective = outer.predict_quantiles
        else:
            ga_objective = engine.quantiles
        g_max = min(config.generation_step * cycle, config.generation_cap)
        ga = run_nsga2(
            ga_objective, spec,
            GaConfig(
                population=config.population, max_generations=g_max,
                seed=_derive_seed(config.seed, _STREAM_GA, cycle),
            ),
        )
        front_con, front_cat = ga.front_con, ga.front_cat
        report = engine.accuracy(front_con, front_cat, threshold, guard_scales)
        eta_out = None
        if outer is not None:
            eta_out = outer_error(
                report.quantiles,
                outer.predict_quantiles(front_con, front_cat),
                guard_scales,
            )
            if np.max(eta_out) > config.outer_tolerance:
                state.outer_size += config.outer_step
        state.previous_front = (front_con.copy(), front_cat.copy())

        enriched = 0
        if report.converged:
            if threshold <= config.eta_target:
                converged = True
        else:
            new_con, new_cat = select_enrichment(
                front_con, front_cat, report, engine, batch_size,
                state.ed, space, config.seed, cycle,
            )
            enriched = new_con.shape[0]
            if enriched:
                new_y = _evaluate_batch(model, new_con, new_cat, counter, config.threads)
                state.ed = state.ed.appended(new_con, new_cat, new_y)
            elif threshold <= config.eta_target:
                stalled = True

        state.evaluations = counter.count
        state.history.append(_history_row(
            cycle, threshold, g_max, report, state.ed.n, counter.count,
            enriched, state.outer_size if outer is not None else None, eta_out,
        ))
        state.next_cycle = cycle + 1
        if checkpoint_path is not None:
            payload = state.to_payload(config, spec, terminal=converged or stalled)
            Path(checkpoint_path).write_text(
                json.dumps(payload) + "\n", encoding="utf-8"
            )
        if converged or stalled:
            break

    final_con, final_cat, final_objectives = _final_front(front_con, front_cat, report)
    return RunResult(
        front_con=final_con,
        front_cat=final_cat,
        front_objectives=final_objectives,
        cycles=cycle,
        evaluations=counter.count,
        converged=converged,
        ed=state.ed,
        report=report,
        history=tuple(state.history),
    )
