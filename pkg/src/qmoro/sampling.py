"""Sampling utilities: Latin hypercubes, quantile transforms, common random numbers.

All randomness is drawn from counter-based streams addressed by an integer
path ``(seed, tag, index, ...)``.  Streams with distinct paths are
statistically independent and stable: adding variables or consumers never
reshuffles draws of existing ones, which is what makes optimization runs
reproducible and checkpoint-resumable bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .problem import (
    EvalCounter,
    ObjectiveModel,
    ProblemSpec,
    RandomVarSpec,
    evaluate,
)

__all__ = [
    "CrnContext",
    "Lhs",
    "conditional_inverse_cdf",
    "empirical_quantile",
    "gumbel_params",
    "inverse_cdf",
    "lhs_sample",
    "lognormal_params",
    "open_uniform",
    "stream",
    "true_quantiles",
]

# Stream tags: one namespace per consumer of randomness.
STREAM_LHS = 1
STREAM_NOISE = 2
STREAM_ENV = 3

_TWO_53 = float(2**53)


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent deterministic random stream addressed by an integer path.

    Args:
        seed: Run-level seed.
        *path: Non-negative integers identifying the consumer (tag, index, ...).

    Returns:
        A counter-based generator; equal ``(seed, path)`` always yields the
        identical sequence, distinct paths yield independent sequences.
    """
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(sequence))


def open_uniform(rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
    """Uniform draws strictly inside (0, 1), safe for quantile transforms."""
    return (rng.integers(0, 2**53, size=size) + 0.5) / _TWO_53


def lognormal_params(mean: float, variance: float) -> tuple[float, float]:
    """Moment-matched lognormal parameters (mu_ln, sigma_ln).

    Args:
        mean: Target mean (> 0).
        variance: Target variance (> 0).

    Returns:
        Parameters of the underlying normal distribution such that
        exp(N(mu_ln, sigma_ln^2)) has the requested mean and variance.
    """
    sigma2_ln = math.log1p(variance / mean**2)
    mu_ln = math.log(mean) - 0.5 * sigma2_ln
    return mu_ln, math.sqrt(sigma2_ln)


def gumbel_params(mean: float, variance: float) -> tuple[float, float]:
    """Moment-matched Gumbel (max-type) parameters (location, scale).

    Args:
        mean: Target mean.
        variance: Target variance (> 0).

    Returns:
        Location and scale such that the Gumbel distribution has the
        requested first two moments.
    """
    scale = math.sqrt(6.0 * variance) / math.pi
    location = mean - np.euler_gamma * scale
    return location, scale


def inverse_cdf(spec: RandomVarSpec, u: float | np.ndarray) -> float | np.ndarray:
    """Quantile function of a random variable spec.

    Args:
        spec: Distribution specification.
        u: Probability level(s), each strictly in (0, 1).

    Returns:
        Quantile value(s), strictly increasing in ``u``; a scalar input
        yields a scalar output.

    Raises:
        ValueError: If any ``u`` lies outside the open interval (0, 1).
    """
    arr = np.asarray(u, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("probability levels must lie strictly in (0, 1)")
    if spec.family == "uniform":
        out = spec.param1 + arr * (spec.param2 - spec.param1)
    elif spec.family == "normal":
        out = spec.param1 + math.sqrt(spec.param2) * ndtri(arr)
    elif spec.family == "lognormal":
        mu_ln, sigma_ln = lognormal_params(spec.param1, spec.param2)
        out = np.exp(mu_ln + sigma_ln * ndtri(arr))
    elif spec.family == "gumbel":
        location, scale = gumbel_params(spec.param1, spec.param2)
        out = location - scale * np.log(-np.log(arr))
    else:  # pragma: no cover - guarded by RandomVarSpec validation
        raise ValueError(f"unknown family {spec.family!r}")
    return float(out) if out.ndim == 0 else out


def conditional_inverse_cdf(
    noise: RandomVarSpec, center: float, u: float | np.ndarray
) -> float | np.ndarray:
    """Quantile function of a design-noise variable centered on a design value.

    Mean-variance families realize ``mean = center + param1`` with variance
    ``param2``; uniform realizes bounds ``[center + param1, center + param2]``.

    Args:
        noise: Noise distribution attached to a continuous design variable.
        center: Current design value the noise is conditioned on.
        u: Probability level(s) strictly in (0, 1).

    Returns:
        Noisy realization quantile(s).
    """
    if noise.family == "uniform":
        shifted = RandomVarSpec("uniform", center + noise.param1, center + noise.param2,
                                name=noise.name)
    else:
        shifted = RandomVarSpec(noise.family, center + noise.param1, noise.param2,
                                name=noise.name)
    return inverse_cdf(shifted, u)


@dataclass(frozen=True)
class Lhs:
    """Latin hypercube sample in the unit hypercube.

    Args:
        n: Number of points.
        points: Array of shape (n, dims); each column places exactly one
            point in every width-1/n stratum.
        optimization: ``"none"`` or ``"maximin"``.
    """

    n: int
    points: np.ndarray
    optimization: str = "none"


def _lhs_draw(rng: np.random.Generator, n: int, dims: int) -> np.ndarray:
    points = np.empty((n, dims))
    for j in range(dims):
        points[:, j] = (rng.permutation(n) + open_uniform(rng, n)) / n
    return points


def lhs_sample(
    n: int,
    dims: int,
    seed: int,
    optimization: str = "none",
    restarts: int = 10,
) -> Lhs:
    """Draw a Latin hypercube sample.

    Args:
        n: Number of points (>= 2).
        dims: Number of dimensions (>= 1).
        seed: Stream seed; equal seeds reproduce the sample exactly.
        optimization: ``"none"`` for a plain draw, ``"maximin"`` to keep the
            draw with the largest minimum pairwise distance over ``restarts``
            candidates.
        restarts: Candidate count for the maximin variant.

    Returns:
        The sampled :class:`Lhs`.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if dims < 1:
        raise ValueError("dims must be >= 1")
    if optimization not in ("none", "maximin"):
        raise ValueError(f"unknown optimization {optimization!r}")
    rng = stream(seed, STREAM_LHS)
    points = _lhs_draw(rng, n, dims)
    if optimization == "maximin":
        best_score = _min_pairwise_distance(points)
        for _ in range(restarts - 1):
            candidate = _lhs_draw(rng, n, dims)
            score = _min_pairwise_distance(candidate)
            if score > best_score:
                best_score, points = score, candidate
    return Lhs(n=n, points=points, optimization=optimization)


def _min_pairwise_distance(points: np.ndarray) -> float:
    deltas = points[:, None, :] - points[None, :, :]
    sq = np.sum(deltas * deltas, axis=2)
    np.fill_diagonal(sq, np.inf)
    return float(np.sqrt(sq.min()))


def empirical_quantile(values: np.ndarray, alpha: float) -> float:
    """Empirical quantile as the ceil(alpha*N)-th order statistic.

    Ties are kept and no interpolation is applied, so the result is always an
    observed value.  The ceiling is evaluated with a small backward guard so
    that mathematically integral products (e.g. 0.9 * 10) are not pushed to
    the next order statistic by floating-point round-up.

    Args:
        values: Sample values (non-empty).
        alpha: Quantile level strictly in (0, 1).

    Returns:
        The ceil(alpha*N)-th smallest sample value.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("cannot take the quantile of an empty sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly in (0, 1)")
    k = math.ceil(alpha * v.size - 1e-9)
    k = min(max(k, 1), v.size)
    return float(np.partition(v, k - 1)[k - 1])


@dataclass(frozen=True)
class CrnContext:
    """Frozen common random numbers shared by every design of one run.

    Holding the base uniforms of the design-conditional variables and the
    realized environmental samples fixed makes the map from a design to its
    cost quantiles a deterministic function, so the optimizer sees a
    noise-free landscape.

    Args:
        seed: Seed the context was built from.
        n_samples: Monte Carlo sample count N.
        base_uniforms: Shape (N, #noisy continuous vars); base uniforms for
            the design-conditional variables, column j belonging to
            ``noise_columns[j]``.
        env_realizations: Shape (N, M_z); realized environmental samples.
        noise_columns: Indices of the continuous design variables that carry
            noise, in ascending order.
    """

    seed: int
    n_samples: int
    base_uniforms: np.ndarray
    env_realizations: np.ndarray
    noise_columns: tuple[int, ...]

    @classmethod
    def create(cls, spec: ProblemSpec, n_samples: int = 5000, seed: int = 0) -> "CrnContext":
        """Draw the frozen sample set for a problem.

        Each variable consumes its own stream keyed by (seed, tag, variable
        index), so adding variables never reshuffles existing columns.

        Args:
            spec: Problem specification.
            n_samples: Monte Carlo sample count N.
            seed: Run-level seed.

        Returns:
            The frozen context.
        """
        noise_columns = tuple(i for i, s in enumerate(spec.design_noise) if s is not None)
        base = np.empty((n_samples, len(noise_columns)))
        for j, idx in enumerate(noise_columns):
            base[:, j] = open_uniform(stream(seed, STREAM_NOISE, idx), n_samples)
        env = np.empty((n_samples, spec.n_environmental))
        for j, env_spec in enumerate(spec.environmental):
            u = open_uniform(stream(seed, STREAM_ENV, j), n_samples)
            env[:, j] = inverse_cdf(env_spec, u)
        return cls(seed=seed, n_samples=n_samples, base_uniforms=base,
                   env_realizations=env, noise_columns=noise_columns)

    def conditional_points(
        self, spec: ProblemSpec, d_con: np.ndarray, d_cat: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Realize the N augmented-space points conditioned on a design.

        Noisy continuous variables are transformed through their conditional
        quantile function using the frozen base uniforms; deterministic ones
        are copied verbatim, environmental columns are appended unchanged,
        and the categorical part of the design is tiled across all samples.

        Args:
            spec: Problem specification the context was built for.
            d_con: Continuous design coordinates, shape (M_con,).
            d_cat: Categorical level indices, shape (M_cat,).

        Returns:
            ``(con, cat)`` with shapes (N, M_con + M_z) and (N, M_cat).
        """
        d_con = np.asarray(d_con, dtype=float).ravel()
        d_cat = np.asarray(d_cat, dtype=int).ravel()
        x = np.tile(d_con, (self.n_samples, 1))
        for j, idx in enumerate(self.noise_columns):
            x[:, idx] = conditional_inverse_cdf(
                spec.design_noise[idx], float(d_con[idx]), self.base_uniforms[:, j]
            )
        con = np.hstack([x, self.env_realizations]) if spec.n_environmental else x
        cat = np.tile(d_cat, (self.n_samples, 1))
        return con, cat


def true_quantiles(
    model: ObjectiveModel,
    spec: ProblemSpec,
    crn: CrnContext,
    d_con: np.ndarray,
    d_cat: np.ndarray,
    counter: EvalCounter | None = None,
) -> np.ndarray:
    """Cost quantiles of a design under the true model and frozen samples.

    Args:
        model: True cost model.
        spec: Problem specification.
        crn: Frozen common-random-numbers context.
        d_con: Continuous design coordinates.
        d_cat: Categorical level indices.
        counter: Optional evaluation counter.

    Returns:
        Array of shape (m,) with the per-objective empirical quantiles.
    """
    con, cat = crn.conditional_points(spec, d_con, d_cat)
    values = evaluate(model, con, cat, counter)
    return np.array([
        empirical_quantile(values[:, k], spec.alpha[k]) for k in range(spec.n_objectives)
    ])
