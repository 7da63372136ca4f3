"""qmoro: quantile-based robust multi-objective optimization with mixed variables.

The package minimizes Monte Carlo quantiles of cost functions over mixed
continuous-categorical design spaces.  An adaptively enriched Kriging
surrogate built in the augmented design-plus-random space supplies cheap
quantile estimates to an NSGA-II optimizer; enrichment cycles add true-model
evaluations where the surrogate is least trustworthy until the Pareto front
reaches a requested relative accuracy.
"""

from .adaptive import AdaptiveConfig, RunResult, build_augmented_space, run
from .bench import get_benchmark, load_reference, reference_solve
from .problem import (
    CategoricalVar,
    ContinuousVar,
    MixedPoint,
    ObjectiveModel,
    ProblemSpec,
    RandomVarSpec,
)
from .sampling import CrnContext, empirical_quantile, inverse_cdf, lhs_sample

__version__ = "0.1.0"

__all__ = [
    "AdaptiveConfig",
    "CategoricalVar",
    "ContinuousVar",
    "CrnContext",
    "MixedPoint",
    "ObjectiveModel",
    "ProblemSpec",
    "RandomVarSpec",
    "RunResult",
    "__version__",
    "build_augmented_space",
    "empirical_quantile",
    "get_benchmark",
    "inverse_cdf",
    "lhs_sample",
    "load_reference",
    "reference_solve",
    "run",
]
