"""Universal Kriging over mixed continuous-categorical spaces.

The correlation kernel multiplies a Gaussian kernel on normalized continuous
coordinates with a Gaussian-of-mismatch kernel on categorical levels
(categorical distance 0/1 as in the Gower similarity), one lengthscale per
variable.  Hyperparameters are calibrated by multi-start bounded minimization
of the profile negative log-likelihood; the trend and process variance have
closed-form generalized-least-squares estimates.

Internally all continuous inputs are normalized to the unit hypercube using
externally supplied bounds (the augmented-space bounds of the optimization
run), so lengthscales are comparable across dimensions and the metric stays
stable while the experimental design grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .sampling import lhs_sample, stream

__all__ = [
    "ExperimentalDesign",
    "KrigingConfig",
    "KrigingModel",
    "Prediction",
    "SharedTailKernel",
    "calibrate",
    "find_duplicates",
    "gower_similarity",
    "kernel_mixed",
    "loo_predictions",
    "model_from_dict",
    "model_to_dict",
    "negative_log_likelihood",
    "predict",
    "predict_point",
]

#: Relative nugget added to the unit diagonal of the correlation matrix.
NUGGET = 1e-8

#: Duplicate tolerance on normalized continuous coordinates.
DUPLICATE_TOL = 1e-10

_STREAM_CALIBRATE = 11

_SQRT_HALF = math.sqrt(0.5)


@dataclass(frozen=True)
class Prediction:
    """Kriging prediction at one point: mean and nonnegative variance."""

    mean: float
    variance: float


@dataclass(frozen=True)
class ExperimentalDesign:
    """Observed inputs and responses the surrogate is trained on.

    Args:
        con: Continuous coordinates, shape (n, C).
        cat: Categorical level indices, shape (n, K).
        y: Responses, shape (n, m); one surrogate is fit per response column.
    """

    con: np.ndarray
    cat: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        con = np.atleast_2d(np.asarray(self.con, dtype=float))
        cat = np.atleast_2d(np.asarray(self.cat, dtype=int))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        object.__setattr__(self, "con", con)
        object.__setattr__(self, "cat", cat)
        object.__setattr__(self, "y", y)
        if not con.shape[0] == cat.shape[0] == y.shape[0]:
            raise ValueError("con, cat and y must have the same number of rows")

    @property
    def n(self) -> int:
        return self.con.shape[0]

    def appended(self, con: np.ndarray, cat: np.ndarray, y: np.ndarray) -> "ExperimentalDesign":
        """New design with extra rows appended."""
        return ExperimentalDesign(
            con=np.vstack([self.con, np.atleast_2d(con)]),
            cat=np.vstack([self.cat, np.atleast_2d(cat)]),
            y=np.vstack([self.y, np.atleast_2d(y)]),
        )


@dataclass(frozen=True)
class KrigingConfig:
    """Calibration settings.

    Args:
        trend: ``"constant"`` or ``"linear"`` (linear in the normalized
            continuous coordinates).
        theta_bounds: Lengthscale search interval, applied in normalized
            input space.
        n_restarts: Number of random multi-start points for the likelihood
            search.
        nugget: Relative nugget added to the correlation diagonal.
    """

    trend: str = "constant"
    theta_bounds: tuple[float, float] = (1e-3, 1e2)
    n_restarts: int = 10
    nugget: float = NUGGET

    def __post_init__(self) -> None:
        if self.trend not in ("constant", "linear"):
            raise ValueError(f"unknown trend {self.trend!r}")
        if not 0 < self.theta_bounds[0] < self.theta_bounds[1]:
            raise ValueError("theta bounds must satisfy 0 < lower < upper")


def gower_similarity(
    con: np.ndarray,
    cat: np.ndarray,
    con2: np.ndarray,
    cat2: np.ndarray,
    ranges: np.ndarray,
) -> np.ndarray:
    """Per-dimension Gower similarity between two mixed points.

    Args:
        con: Continuous coordinates of the first point.
        cat: Categorical level indices of the first point.
        con2: Continuous coordinates of the second point.
        cat2: Categorical level indices of the second point.
        ranges: Positive per-dimension ranges scaling the continuous
            differences.

    Returns:
        Vector of length C + K: ``|con - con2| / range`` for continuous
        dimensions followed by the 0/1 mismatch indicator for categorical
        dimensions.
    """
    con = np.asarray(con, dtype=float).ravel()
    con2 = np.asarray(con2, dtype=float).ravel()
    cat = np.asarray(cat, dtype=int).ravel()
    cat2 = np.asarray(cat2, dtype=int).ravel()
    ranges = np.asarray(ranges, dtype=float).ravel()
    if np.any(ranges <= 0):
        raise ValueError("ranges must be strictly positive")
    continuous = np.abs(con - con2) / ranges
    mismatch = (cat != cat2).astype(float)
    return np.concatenate([continuous, mismatch])


def kernel_mixed(
    con: np.ndarray,
    cat: np.ndarray,
    con2: np.ndarray,
    cat2: np.ndarray,
    theta: np.ndarray,
    ranges: np.ndarray | None = None,
) -> float:
    """Mixed Gaussian kernel between two points.

    ``exp(-1/2 sum_con ((dw)/theta)^2 - 1/2 sum_cat (s/theta)^2)`` where
    ``s`` is the 0/1 categorical mismatch; continuous differences are
    optionally divided by ``ranges`` first.

    Args:
        con: Continuous coordinates of the first point.
        cat: Categorical level indices of the first point.
        con2: Continuous coordinates of the second point.
        cat2: Categorical level indices of the second point.
        theta: Positive lengthscales, one per variable (continuous first).
        ranges: Optional per-continuous-dimension ranges to normalize by.

    Returns:
        Kernel value in (0, 1]; 1 exactly iff the points coincide.
    """
    con = np.asarray(con, dtype=float).ravel()
    con2 = np.asarray(con2, dtype=float).ravel()
    diffs = con - con2
    if ranges is not None:
        diffs = diffs / np.asarray(ranges, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    if np.any(theta <= 0):
        raise ValueError("lengthscales must be strictly positive")
    n_con = diffs.size
    mismatch = (np.asarray(cat, int).ravel() != np.asarray(cat2, int).ravel()).astype(float)
    exponent = np.sum((diffs / theta[:n_con]) ** 2) + np.sum((mismatch / theta[n_con:]) ** 2)
    return float(np.exp(-0.5 * exponent))


def _one_hot(cat: np.ndarray, counts: Sequence[int]) -> np.ndarray:
    """Concatenated one-hot encoding of categorical columns."""
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    blocks = []
    for j, b in enumerate(counts):
        block = np.zeros((cat.shape[0], b))
        block[np.arange(cat.shape[0]), cat[:, j]] = 1.0
        blocks.append(block)
    if not blocks:
        return np.zeros((cat.shape[0], 0))
    return np.hstack(blocks)


def _embed(
    con_norm: np.ndarray,
    cat: np.ndarray,
    theta: np.ndarray,
    counts: Sequence[int],
) -> np.ndarray:
    """Scaled coordinates whose squared Euclidean distance equals the kernel exponent.

    Continuous columns are divided by their lengthscale; each categorical
    variable becomes a one-hot block scaled by ``1/(sqrt(2) theta)`` so that a
    level mismatch contributes exactly ``1/theta^2`` to the squared distance.
    """
    n_con = con_norm.shape[1]
    parts = [con_norm / theta[:n_con]]
    if counts:
        hot = _one_hot(cat, counts)
        scales = np.concatenate([
            np.full(b, _SQRT_HALF / theta[n_con + j]) for j, b in enumerate(counts)
        ])
        parts.append(hot * scales)
    return np.hstack(parts)


def _trend_matrix(trend: str, con_norm: np.ndarray) -> np.ndarray:
    ones = np.ones((con_norm.shape[0], 1))
    if trend == "constant":
        return ones
    return np.hstack([ones, con_norm])


@dataclass(frozen=True)
class KrigingModel:
    """Calibrated universal Kriging surrogate for one response.

    Args:
        con: Raw continuous training inputs, shape (n, C).
        cat: Categorical training inputs, shape (n, K).
        y: Training responses, shape (n,).
        bounds: Continuous normalization bounds, shape (C, 2); also the
            source of the Gower ranges upstream.
        cat_counts: Level count per categorical variable.
        theta: Calibrated lengthscales, one per variable.
        trend: Trend basis name.
        beta: Generalized-least-squares trend coefficients.
        sigma2: Process variance estimate.
        nugget: Relative nugget on the correlation diagonal.
    """

    con: np.ndarray
    cat: np.ndarray
    y: np.ndarray
    bounds: np.ndarray
    cat_counts: tuple[int, ...]
    theta: np.ndarray
    trend: str
    beta: np.ndarray
    sigma2: float
    nugget: float
    _cache: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def n(self) -> int:
        return self.con.shape[0]

    def normalize(self, con: np.ndarray) -> np.ndarray:
        """Map raw continuous coordinates to the unit hypercube."""
        con = np.atleast_2d(np.asarray(con, dtype=float))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (con - lo) / (hi - lo)

    def embed(self, con: np.ndarray, cat: np.ndarray) -> np.ndarray:
        """Lengthscale-scaled embedding used for kernel distances."""
        return _embed(self.normalize(con), np.atleast_2d(np.asarray(cat, int)),
                      self.theta, self.cat_counts)


def _factorize(
    con_norm: np.ndarray,
    cat: np.ndarray,
    y: np.ndarray,
    theta: np.ndarray,
    counts: Sequence[int],
    trend: str,
    nugget: float,
):
    """Cholesky-based GLS quantities for a given lengthscale vector.

    Returns:
        Tuple ``(chol_lower, beta, sigma2, log_det)`` or ``None`` when the
        correlation matrix cannot be factorized.
    """
    embedded = _embed(con_norm, cat, theta, counts)
    corr = np.exp(-0.5 * cdist(embedded, embedded, "sqeuclidean"))
    corr[np.diag_indices_from(corr)] += nugget
    try:
        lower = cholesky(corr, lower=True)
    except np.linalg.LinAlgError:
        return None
    f_mat = _trend_matrix(trend, con_norm)
    a = solve_triangular(lower, f_mat, lower=True)
    b = solve_triangular(lower, y, lower=True)
    gram = a.T @ a
    try:
        beta = np.linalg.solve(gram, a.T @ b)
    except np.linalg.LinAlgError:
        return None
    resid = b - a @ beta
    n = con_norm.shape[0]
    sigma2 = float(resid @ resid) / n
    log_det = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return lower, beta, sigma2, log_det


def negative_log_likelihood(
    ed: ExperimentalDesign,
    objective: int,
    theta: np.ndarray,
    bounds: np.ndarray,
    cat_counts: Sequence[int] = (),
    trend: str = "constant",
    nugget: float = NUGGET,
) -> float:
    """Profile negative log-likelihood at fixed lengthscales.

    The trend coefficients and the process variance are concentrated out with
    their closed-form generalized-least-squares estimates before the
    likelihood is evaluated.

    Args:
        ed: Experimental design.
        objective: Response column to use.
        theta: Lengthscales, one per variable.
        bounds: Continuous normalization bounds, shape (C, 2).
        cat_counts: Level count per categorical variable.
        trend: Trend basis name.
        nugget: Relative nugget.

    Returns:
        The profile negative log-likelihood; ``+inf`` when the correlation
        matrix cannot be factorized (steering optimizers away).
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    con_norm = (ed.con - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])
    parts = _factorize(con_norm, ed.cat, ed.y[:, objective],
                       np.asarray(theta, float), tuple(cat_counts), trend, nugget)
    if parts is None:
        return math.inf
    _, _, sigma2, log_det = parts
    n = ed.n
    sigma2 = max(sigma2, 1e-300)
    return 0.5 * (n * math.log(2.0 * math.pi * sigma2) + log_det + n)


def calibrate(
    con: np.ndarray,
    cat: np.ndarray,
    y: np.ndarray,
    bounds: np.ndarray,
    cat_counts: Sequence[int] = (),
    config: KrigingConfig = KrigingConfig(),
    seed: int = 0,
    warm_start: np.ndarray | None = None,
) -> KrigingModel:
    """Fit a Kriging model by multi-start profile-likelihood minimization.

    Lengthscales are searched in log10 space over ``config.theta_bounds``
    with a bounded derivative-free local method from ``config.n_restarts``
    space-filling start points (plus an optional warm start); the best
    restart wins, ties broken by restart order.

    Args:
        con: Continuous inputs, shape (n, C).
        cat: Categorical inputs, shape (n, K).
        y: Responses, shape (n,).
        bounds: Continuous normalization bounds, shape (C, 2).
        cat_counts: Level count per categorical variable.
        config: Calibration settings.
        seed: Stream seed for the restart draws.
        warm_start: Optional lengthscale vector tried before the random
            restarts.

    Returns:
        The calibrated model.

    Raises:
        ValueError: If the design is too small for the trend basis or every
            restart fails to produce a finite likelihood.
    """
    con = np.atleast_2d(np.asarray(con, dtype=float))
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    y = np.asarray(y, dtype=float).ravel()
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    cat_counts = tuple(int(b) for b in cat_counts)
    n, n_con = con.shape
    n_dims = n_con + len(cat_counts)
    p = 1 if config.trend == "constant" else 1 + n_con
    if n < p + 2:
        raise ValueError(f"need at least {p + 2} points to calibrate, got {n}")

    con_norm = (con - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])
    log_lo, log_hi = (math.log10(b) for b in config.theta_bounds)

    def objective(log_theta: np.ndarray) -> float:
        parts = _factorize(con_norm, cat, y, 10.0**log_theta, cat_counts,
                           config.trend, config.nugget)
        if parts is None:
            return math.inf
        _, _, sigma2, log_det = parts
        sigma2 = max(sigma2, 1e-300)
        return 0.5 * (n * math.log(2.0 * math.pi * sigma2) + log_det + n)

    starts = []
    if warm_start is not None:
        starts.append(np.clip(np.log10(np.asarray(warm_start, float)), log_lo, log_hi))
    unit = lhs_sample(max(config.n_restarts, 2), n_dims,
                      seed=seed * 1000003 + _STREAM_CALIBRATE).points[: config.n_restarts]
    starts.extend(log_lo + unit * (log_hi - log_lo))

    box = optimize.Bounds(np.full(n_dims, log_lo), np.full(n_dims, log_hi))
    best: tuple[float, int, np.ndarray] | None = None
    for index, x0 in enumerate(starts):
        result = optimize.minimize(
            objective, x0, method="Powell", bounds=box,
            options={"xtol": 1e-2, "ftol": 1e-3, "maxfev": 200 * n_dims},
        )
        fun = float(result.fun)
        if math.isfinite(fun) and (best is None or fun < best[0]):
            best = (fun, index, np.clip(result.x, log_lo, log_hi))
    if best is None:
        raise ValueError("calibration failed: no restart produced a finite likelihood")

    theta = 10.0 ** best[2]
    parts = _factorize(con_norm, cat, y, theta, cat_counts, config.trend, config.nugget)
    if parts is None:  # pragma: no cover - finite NLL implies factorizable
        raise ValueError("calibration failed: optimal lengthscales not factorizable")
    lower, beta, sigma2, _ = parts
    model = KrigingModel(
        con=con, cat=cat, y=y, bounds=bounds, cat_counts=cat_counts,
        theta=theta, trend=config.trend, beta=beta, sigma2=sigma2,
        nugget=config.nugget,
    )
    _finalize(model, lower)
    return model


def _finalize(model: KrigingModel, lower: np.ndarray | None = None) -> dict:
    """Populate prediction caches (factorization, GLS byproducts)."""
    cache = model._cache
    if "alpha" in cache:
        return cache
    con_norm = model.normalize(model.con)
    if lower is None:
        parts = _factorize(con_norm, model.cat, model.y, model.theta,
                           model.cat_counts, model.trend, model.nugget)
        if parts is None:
            raise ValueError("stored lengthscales do not factorize")
        lower = parts[0]
    f_mat = _trend_matrix(model.trend, con_norm)
    resid = model.y - f_mat @ model.beta
    chol = (lower, True)
    identity = np.eye(model.n)
    r_inv = cho_solve(chol, identity)
    rinv_f = cho_solve(chol, f_mat)
    gram = f_mat.T @ rinv_f
    gram_inv = np.linalg.solve(gram, np.eye(gram.shape[0]))
    cache.update(
        embedded=_embed(con_norm, model.cat, model.theta, model.cat_counts),
        lower=lower,
        alpha=cho_solve(chol, resid),
        r_inv=r_inv,
        ft_rinv=rinv_f.T,
        gram_inv=gram_inv,
    )
    return cache


def _predict_embedded(
    model: KrigingModel,
    embedded: np.ndarray,
    f_mat: np.ndarray,
    with_variance: bool,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Prediction core shared by the generic and shared-tail paths."""
    cache = _finalize(model)
    sq = cdist(embedded, cache["embedded"], "sqeuclidean")
    r = np.exp(-0.5 * sq)
    # The nugget belongs to the modelled signal, not to observation noise:
    # at zero distance the correlation equals the matching R diagonal entry,
    # which makes re-prediction at a design point reproduce the observed
    # response exactly even when R is poorly conditioned.
    exact = sq == 0.0
    if exact.any():
        r[exact] += model.nugget
    return _predict_from_r(model, r, f_mat, with_variance)


def _predict_from_r(
    model: KrigingModel,
    r: np.ndarray,
    f_mat: np.ndarray,
    with_variance: bool,
) -> tuple[np.ndarray, np.ndarray | None]:
    # BLAS matrix products: deterministic for fixed operand shapes, which is
    # what the reproducibility contracts need (a batch may differ from the
    # equivalent pointwise calls in the last floating-point bits).
    cache = model._cache
    mean = np.sum(f_mat * model.beta, axis=1) + np.sum(r * cache["alpha"], axis=1)
    if not with_variance:
        return mean, None
    r_rinv_r = np.sum((r @ cache["r_inv"]) * r, axis=1)
    u = r @ cache["ft_rinv"].T - f_mat
    trend_term = np.sum((u @ cache["gram_inv"]) * u, axis=1)
    variance = model.sigma2 * (1.0 - r_rinv_r + trend_term)
    return mean, np.maximum(variance, 0.0)


def predict(
    model: KrigingModel,
    con: np.ndarray,
    cat: np.ndarray,
    with_variance: bool = True,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Predict mean (and variance) at a batch of mixed points.

    Args:
        model: Calibrated model.
        con: Continuous coordinates, shape (B, C) or (C,).
        cat: Categorical indices, shape (B, K) or (K,).
        with_variance: Also return the prediction variance.

    Returns:
        ``(mean, variance)`` arrays of shape (B,); ``variance`` is ``None``
        when not requested, and clamped at zero from below otherwise.
    """
    con = np.atleast_2d(np.asarray(con, dtype=float))
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    con_norm = model.normalize(con)
    embedded = _embed(con_norm, cat, model.theta, model.cat_counts)
    f_mat = _trend_matrix(model.trend, con_norm)
    return _predict_embedded(model, embedded, f_mat, with_variance)


def predict_point(model: KrigingModel, con: np.ndarray, cat: np.ndarray) -> Prediction:
    """Pointwise prediction; delegates to the batch path with one row."""
    mean, variance = predict(model, con, cat, with_variance=True)
    return Prediction(mean=float(mean[0]), variance=float(variance[0]))


class SharedTailKernel:
    """Fast predictions over batches sharing fixed trailing continuous columns.

    During quantile estimation without design noise, every conditional batch
    holds one design fixed across rows while the same frozen environmental
    block occupies the trailing continuous columns of all batches.  The
    kernel then factorizes into a per-design scalar row and a
    batch-independent matrix computed once here.

    Args:
        model: Calibrated model whose trailing continuous dimensions match
            the tail block.
        tail: Trailing continuous columns shared by every batch, shape
            (N, T); typically the frozen environmental realizations.
    """

    def __init__(self, model: KrigingModel, tail: np.ndarray) -> None:
        self.model = model
        cache = _finalize(model)
        tail = np.atleast_2d(np.asarray(tail, dtype=float))
        n_con = model.con.shape[1]
        self.n_head = n_con - tail.shape[1]
        if self.n_head < 0:
            raise ValueError("tail block wider than the model's continuous input")
        lo = model.bounds[self.n_head:, 0]
        span = model.bounds[self.n_head:, 1] - model.bounds[self.n_head:, 0]
        tail_norm = (tail - lo) / span
        theta_tail = model.theta[self.n_head:n_con]
        ed_tail = model.normalize(model.con)[:, self.n_head:]
        tail_sq = cdist(tail_norm / theta_tail, ed_tail / theta_tail, "sqeuclidean")
        self._tail_kernel = np.exp(-0.5 * tail_sq)
        self._tail_zero = tail_sq == 0.0
        # Trend values vary over the batch only through the tail columns.
        full_con = np.hstack([np.zeros((tail.shape[0], self.n_head)), tail])
        self._tail_con_norm = (np.atleast_2d(full_con) - model.bounds[:, 0]) / (
            model.bounds[:, 1] - model.bounds[:, 0]
        )

    def predict_design(
        self,
        head_con: np.ndarray,
        cat: np.ndarray,
        with_variance: bool = True,
    ) -> tuple[np.ndarray, np.ndarray | None]:
        """Predict over the implicit batch ``[tile(head) | tail]`` for one design.

        Args:
            head_con: Leading continuous coordinates, shape (n_head,).
            cat: Categorical indices shared by the whole batch, shape (K,).
            with_variance: Also return variances.

        Returns:
            ``(mean, variance)`` arrays with one entry per tail row.
        """
        model = self.model
        cache = model._cache
        head_con = np.asarray(head_con, dtype=float).ravel()
        cat = np.asarray(cat, dtype=int).ravel()
        n_con = model.con.shape[1]
        lo = model.bounds[: self.n_head, 0]
        span = model.bounds[: self.n_head, 1] - model.bounds[: self.n_head, 0]
        head_norm = (head_con - lo) / span
        ed_norm = model.normalize(model.con)
        theta_head = model.theta[: self.n_head]
        head_sq = np.sum(((head_norm - ed_norm[:, : self.n_head]) / theta_head) ** 2, axis=1)
        mismatch = (cat != model.cat).astype(float)
        theta_cat = model.theta[n_con:]
        cat_sq = mismatch @ (1.0 / theta_cat**2) if theta_cat.size else 0.0
        head_exponent = head_sq + cat_sq
        head_row = np.exp(-0.5 * head_exponent)
        r = self._tail_kernel * head_row
        # Same zero-distance nugget convention as the generic prediction path.
        exact = self._tail_zero & (head_exponent == 0.0)
        if exact.any():
            r[exact] += model.nugget
        con_norm = self._tail_con_norm.copy()
        con_norm[:, : self.n_head] = head_norm
        f_mat = _trend_matrix(model.trend, con_norm)
        return _predict_from_r(model, r, f_mat, with_variance)


def loo_predictions(model: KrigingModel) -> np.ndarray:
    """Leave-one-out predicted means at the training points.

    Each point is predicted from a model refit (same lengthscales, refreshed
    trend and variance estimates) on the remaining n-1 points.

    Args:
        model: Calibrated model.

    Returns:
        Array of shape (n,) with the held-out predictions.
    """
    out = np.empty(model.n)
    index = np.arange(model.n)
    for i in range(model.n):
        keep = index != i
        con_norm = model.normalize(model.con[keep])
        parts = _factorize(con_norm, model.cat[keep], model.y[keep], model.theta,
                           model.cat_counts, model.trend, model.nugget)
        if parts is None:
            raise ValueError("leave-one-out factorization failed")
        lower, beta, sigma2, _ = parts
        sub = KrigingModel(
            con=model.con[keep], cat=model.cat[keep], y=model.y[keep],
            bounds=model.bounds, cat_counts=model.cat_counts, theta=model.theta,
            trend=model.trend, beta=beta, sigma2=sigma2, nugget=model.nugget,
        )
        _finalize(sub, lower)
        mean, _ = predict(sub, model.con[i], model.cat[i], with_variance=False)
        out[i] = mean[0]
    return out


def find_duplicates(
    con: np.ndarray,
    cat: np.ndarray,
    bounds: np.ndarray,
    against_con: np.ndarray | None = None,
    against_cat: np.ndarray | None = None,
    tol: float = DUPLICATE_TOL,
) -> np.ndarray:
    """Mark rows duplicating earlier rows or rows of a reference set.

    Two mixed points are duplicates when their categorical parts match
    exactly and their normalized continuous parts differ by at most ``tol``
    in every dimension.

    Args:
        con: Continuous rows to check, shape (B, C).
        cat: Categorical rows to check, shape (B, K).
        bounds: Normalization bounds, shape (C, 2).
        against_con: Optional reference continuous rows.
        against_cat: Optional reference categorical rows.
        tol: Normalized-coordinate tolerance.

    Returns:
        Boolean mask of length B; True marks a duplicate (of the reference
        set or of an earlier kept row).
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    span = bounds[:, 1] - bounds[:, 0]
    con = np.atleast_2d(np.asarray(con, dtype=float)) / span
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    if against_con is not None and len(against_con):
        ref_con = [np.asarray(against_con, float).reshape(-1, bounds.shape[0]) / span]
        ref_cat = [np.atleast_2d(np.asarray(against_cat, int))]
    else:
        ref_con, ref_cat = [], []
    mask = np.zeros(con.shape[0], dtype=bool)
    for i in range(con.shape[0]):
        for rc, rk in zip(ref_con, ref_cat):
            same_cat = np.all(rk == cat[i], axis=1) if rk.size else np.ones(len(rc), bool)
            close = np.all(np.abs(rc - con[i]) <= tol, axis=1)
            if np.any(same_cat & close):
                mask[i] = True
                break
        if not mask[i] and i > 0:
            kept = ~mask[:i]
            prev_con, prev_cat = con[:i][kept], cat[:i][kept]
            same_cat = (np.all(prev_cat == cat[i], axis=1)
                        if prev_cat.size else np.ones(len(prev_con), bool))
            close = np.all(np.abs(prev_con - con[i]) <= tol, axis=1)
            if np.any(same_cat & close):
                mask[i] = True
    return mask


FORMAT = "qmoro-kriging"
FORMAT_VERSION = 1


def model_to_dict(model: KrigingModel) -> dict:
    """Serialize a model to a JSON-compatible mapping (exact round-trip)."""
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "trend": model.trend,
        "theta": model.theta.tolist(),
        "beta": model.beta.tolist(),
        "sigma2": model.sigma2,
        "nugget": model.nugget,
        "bounds": model.bounds.tolist(),
        "cat_counts": list(model.cat_counts),
        "con": model.con.tolist(),
        "cat": model.cat.tolist(),
        "y": model.y.tolist(),
    }


def model_from_dict(payload: dict) -> KrigingModel:
    """Rebuild a model serialized by :func:`model_to_dict`.

    Prediction caches are recomputed from the stored experimental design and
    lengthscales, reproducing the original predictions bit-for-bit.
    """
    if payload.get("format") != FORMAT:
        raise ValueError("not a serialized Kriging model")
    if payload.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model version {payload.get('version')!r}")
    model = KrigingModel(
        con=np.asarray(payload["con"], dtype=float),
        cat=np.asarray(payload["cat"], dtype=int),
        y=np.asarray(payload["y"], dtype=float),
        bounds=np.asarray(payload["bounds"], dtype=float),
        cat_counts=tuple(payload["cat_counts"]),
        theta=np.asarray(payload["theta"], dtype=float),
        trend=payload["trend"],
        beta=np.asarray(payload["beta"], dtype=float),
        sigma2=float(payload["sigma2"]),
        nugget=float(payload["nugget"]),
    )
    _finalize(model)
    return model
