"""Built-in benchmark problems and the brute-force reference solver.

Two self-contained analytic benchmarks ship with the package.  The first
composes a pair of quadratic bowls with additive categorical shifts,
categorical cost multipliers, and multiplicative environmental noise.  The
second places two Gaussian peaks at opposite corners of a small box, attaches
normal noise to both design coordinates, and lets a binary category trade a
constant between the two costs.

The reference solver runs the genetic optimizer directly on true-model
quantiles under frozen common random numbers, at a scale large enough for the
result to serve as the ground truth that surrogate-assisted runs are scored
against.  Reference fronts are stored in-repo as versioned JSON artifacts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .metrics import Front2D
from .moga import GaConfig, run_nsga2
from .problem import (
    CategoricalVar,
    ContinuousVar,
    EvalCounter,
    ObjectiveModel,
    ProblemSpec,
    RandomVarSpec,
    evaluate,
    register_constraint,
    register_model,
)
from .sampling import CrnContext, empirical_quantile

REFERENCE_FORMAT = "qmoro-reference"
REFERENCE_VERSION = 1


@dataclass(frozen=True)
class BenchmarkProblem:
    """A benchmark with its true model and documented reference-run scale.

    Args:
        spec: Problem specification (variables, noise, quantile levels,
            constraints).
        model: True cost model over the augmented space.
        reference_population: Population size of the reference solver.
        reference_generations: Generation count of the reference solver.
        n_samples: Monte Carlo sample count per quantile.
        reference_seed: Seed used for the shipped reference artifact.
    """

    spec: ProblemSpec
    model: ObjectiveModel
    reference_population: int = 100
    reference_generations: int = 100
    n_samples: int = 5000
    reference_seed: int = 0

    @property
    def name(self) -> str:
        return self.spec.name


# --- first benchmark -------------------------------------------------------

_SHIFTS = np.array([5.0, -2.0, 0.0])
_MULT_C1 = np.array([2.0, 0.8, 0.95])
_MULT_C2 = np.array([2.0, 0.95, 0.8])


def example1_shifted_costs(con: np.ndarray, cat: np.ndarray) -> np.ndarray:
    """Quadratic base costs plus the additive effect of the first category.

    This is the intermediate before the second category's multipliers and the
    environmental noise are applied; switching the first category from its
    last level to its middle level lowers both components by exactly 2 here.

    Args:
        con: Continuous coordinates, shape (n, >=2); columns 0-1 are the
            design values.
        cat: Level indices, shape (n, 2).

    Returns:
        Array of shape (n, 2).
    """
    d1 = con[:, 0]
    d2 = con[:, 1]
    shift = _SHIFTS[cat[:, 0]]
    c1 = 4.0 * (d1**2 + d2**2) + shift
    c2 = (d1 - 5.0) ** 2 + (d2 - 5.0) ** 2 + shift
    return np.column_stack([c1, c2])


def example1_costs(con: np.ndarray, cat: np.ndarray) -> np.ndarray:
    """Full first-benchmark costs on augmented points.

    Continuous columns are ``(d1, d2, z5, z6, z7)``: two design coordinates
    followed by the three environmental variables.  The two categories select
    an additive shift and a pair of multipliers; the noise enters as
    ``(scaled + z**2) * z7`` per component.

    Args:
        con: Continuous coordinates, shape (n, 5).
        cat: Level indices, shape (n, 2).

    Returns:
        Costs of shape (n, 2).
    """
    shifted = example1_shifted_costs(con, cat)
    z5 = con[:, 2]
    z6 = con[:, 3]
    z7 = con[:, 4]
    c1 = (shifted[:, 0] * _MULT_C1[cat[:, 1]] + z5**2) * z7
    c2 = (shifted[:, 1] * _MULT_C2[cat[:, 1]] + z6**2) * z7
    return np.column_stack([c1, c2])


def _disk_constraint(con: np.ndarray, cat: np.ndarray) -> np.ndarray:
    """(d1 - 5)^2 + d2^2 - 25 <= 0."""
    return (con[:, 0] - 5.0) ** 2 + con[:, 1] ** 2 - 25.0


def _disk_constraint_repeated(con: np.ndarray, cat: np.ndarray) -> np.ndarray:
    """(d1 - 5)^2 + d1^2 - 25 <= 0 (first coordinate used twice)."""
    return (con[:, 0] - 5.0) ** 2 + con[:, 0] ** 2 - 25.0


def _exclusion_constraint(con: np.ndarray, cat: np.ndarray) -> np.ndarray:
    """7.7 - (d1 - 8)^2 - (d2 + 3)^2 <= 0."""
    return 7.7 - (con[:, 0] - 8.0) ** 2 - (con[:, 1] + 3.0) ** 2


def example1(constraint_variant: str = "standard") -> BenchmarkProblem:
    """Build the first benchmark problem.

    Design space: d1 in [0, 5], d2 in [0, 3], two three-level categories.
    Environmental variables: two lognormal factors and one Gumbel factor,
    all moment-matched from (mean, variance).  Both cost quantiles are taken
    at level 0.9.

    Args:
        constraint_variant: ``"standard"`` bounds the design by the disk
            ``(d1-5)^2 + d2^2 <= 25``; ``"alternate"`` replaces ``d2`` with a
            repeated ``d1`` in that expression.  The exclusion constraint
            ``(d1-8)^2 + (d2+3)^2 >= 7.7`` is shared by both variants.

    Returns:
        The assembled benchmark.
    """
    if constraint_variant not in ("standard", "alternate"):
        raise ValueError(
            f"unknown constraint variant {constraint_variant!r}; "
            "expected 'standard' or 'alternate'"
        )
    disk = _disk_constraint if constraint_variant == "standard" else _disk_constraint_repeated
    disk_name = "disk" if constraint_variant == "standard" else "disk-alternate"
    spec = ProblemSpec(
        name="example1",
        continuous=(
            ContinuousVar("d1", 0.0, 5.0),
            ContinuousVar("d2", 0.0, 3.0),
        ),
        categorical=(
            CategoricalVar("d3", ("1", "2", "3")),
            CategoricalVar("d4", ("1", "2", "3")),
        ),
        n_objectives=2,
        alpha=(0.9, 0.9),
        design_noise=(None, None),
        environmental=(
            RandomVarSpec("lognormal", 5.0, 0.25, name="z5"),
            RandomVarSpec("lognormal", 4.0, 0.16, name="z6"),
            RandomVarSpec("gumbel", 1.0, 0.04, name="z7"),
        ),
        constraints=(disk, _exclusion_constraint),
        constraint_names=(disk_name, "exclusion"),
    )
    model = ObjectiveModel(name="example1", n_objectives=2, fn=example1_costs)
    return BenchmarkProblem(spec=spec, model=model)


# --- second benchmark ------------------------------------------------------

_PEAK_OFFSET = 1.0 / math.sqrt(2.0)
_E2_BASE1 = np.array([1.0, 1.25])
_E2_BASE2 = np.array([1.0, 0.75])


def example2_costs(con: np.ndarray, cat: np.ndarray) -> np.ndarray:
    """Second-benchmark costs: two opposing Gaussian wells and a trade-off
    category.

    Continuous columns are the noisy realizations ``(x1, x2)`` of the two
    design coordinates.  Each cost is a category-dependent constant minus a
    Gaussian peak; the peaks sit at opposite corners ``+-(1/sqrt(2),
    1/sqrt(2))``.  Switching the category from its first to its second level
    raises the first cost by 0.25 and lowers the second by 0.25.

    Args:
        con: Continuous coordinates, shape (n, 2).
        cat: Level indices, shape (n, 1).

    Returns:
        Costs of shape (n, 2).
    """
    x1 = con[:, 0]
    x2 = con[:, 1]
    peak1 = np.exp(-((x1 - _PEAK_OFFSET) ** 2 + (x2 - _PEAK_OFFSET) ** 2))
    peak2 = np.exp(-((x1 + _PEAK_OFFSET) ** 2 + (x2 + _PEAK_OFFSET) ** 2))
    return np.column_stack([_E2_BASE1[cat[:, 0]] - peak1, _E2_BASE2[cat[:, 0]] - peak2])


def example2() -> BenchmarkProblem:
    """Build the second benchmark problem.

    Design space: d1, d2 in [-1.5, 1.5] plus one binary category.  Both
    continuous coordinates carry zero-mean normal noise with variance 0.01,
    so the model is evaluated at noisy realizations rather than at the design
    itself.  There are no environmental variables and no constraints; both
    cost quantiles are taken at level 0.9.

    Returns:
        The assembled benchmark.
    """
    spec = ProblemSpec(
        name="example2",
        continuous=(
            ContinuousVar("d1", -1.5, 1.5),
            ContinuousVar("d2", -1.5, 1.5),
        ),
        categorical=(CategoricalVar("d3", ("1", "2")),),
        n_objectives=2,
        alpha=(0.9, 0.9),
        design_noise=(
            RandomVarSpec("normal", 0.0, 0.01, name="x1-noise"),
            RandomVarSpec("normal", 0.0, 0.01, name="x2-noise"),
        ),
        environmental=(),
        constraints=(),
        constraint_names=(),
    )
    model = ObjectiveModel(name="example2", n_objectives=2, fn=example2_costs)
    return BenchmarkProblem(spec=spec, model=model)


BENCHMARKS: dict[str, Callable[[], BenchmarkProblem]] = {
    "example1": example1,
    "example2": example2,
}


def get_benchmark(name: str) -> BenchmarkProblem:
    """Return a built-in benchmark by name.

    Args:
        name: One of ``sorted(BENCHMARKS)``.

    Returns:
        A freshly built benchmark.

    Raises:
        ValueError: If the name is not registered.
    """
    if name not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}; expected one of {sorted(BENCHMARKS)}")
    return BENCHMARKS[name]()


register_model("example1", lambda: example1().model)
register_model("example2", lambda: example2().model)
register_constraint("example1-disk", _disk_constraint)
register_constraint("example1-disk-alternate", _disk_constraint_repeated)
register_constraint("example1-exclusion", _exclusion_constraint)


# --- reference solver ------------------------------------------------------


def true_quantile_objective(
    model: ObjectiveModel,
    spec: ProblemSpec,
    crn: CrnContext,
    counter: EvalCounter | None = None,
) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Batch objective mapping designs to their true cost quantiles.

    Quantiles are cached per design, so designs that reappear across
    generations (elitism, clones) cost no further model evaluations.  The
    uncached designs of a batch are realized and evaluated in one stacked
    call, which keeps the model invocation vectorized across the population;
    because the model evaluates rows independently, the result is
    bit-identical to evaluating each design on its own.

    Args:
        model: True cost model.
        spec: Problem specification.
        crn: Frozen common-random-numbers context.
        counter: Optional evaluation counter.

    Returns:
        A callable mapping ``(con (L, M_con), cat (L, M_cat))`` to an
        ``(L, m)`` array of per-objective quantiles.
    """
    cache: dict[tuple[bytes, bytes], np.ndarray] = {}
    n = crn.n_samples
    m = spec.n_objectives

    def objective(con: np.ndarray, cat: np.ndarray) -> np.ndarray:
        con = np.asarray(con, dtype=float)
        cat = np.asarray(cat, dtype=int)
        keys = [(con[i].tobytes(), cat[i].tobytes()) for i in range(con.shape[0])]
        fresh: list[int] = []
        pending: set[tuple[bytes, bytes]] = set()
        for i, key in enumerate(keys):
            if key not in cache and key not in pending:
                pending.add(key)
                fresh.append(i)
        if fresh:
            blocks = [crn.conditional_points(spec, con[i], cat[i]) for i in fresh]
            values = evaluate(
                model,
                np.vstack([b[0] for b in blocks]),
                np.vstack([b[1] for b in blocks]),
                counter,
            )
            for j, i in enumerate(fresh):
                chunk = values[j * n : (j + 1) * n]
                cache[keys[i]] = np.array(
                    [empirical_quantile(chunk[:, k], spec.alpha[k]) for k in range(m)]
                )
        return np.array([cache[key] for key in keys])

    return objective


@dataclass(frozen=True)
class ReferenceArtifact:
    """Ground-truth front and Pareto set produced by the reference solver.

    Rows of ``objectives``, ``set_con`` and ``set_cat`` are aligned: one row
    per distinct rank-1 design, sorted by first objective (ties broken by the
    remaining columns).  ``front`` exposes the strictly non-dominated
    staircase used for hypervolume scoring.

    Args:
        problem: Benchmark name.
        seed: Seed of the generating run.
        population: Population size used.
        generations: Generation cap used.
        n_samples: Monte Carlo sample count per quantile.
        alpha: Quantile level per objective.
        evaluations: True-model evaluations spent.
        converged: Whether the solver's hypervolume test triggered before the
            generation cap.
        objectives: Quantile vectors, shape (n, m).
        set_con: Continuous design coordinates, shape (n, M_con).
        set_cat: Categorical level indices, shape (n, M_cat).
    """

    problem: str
    seed: int
    population: int
    generations: int
    n_samples: int
    alpha: tuple[float, ...]
    evaluations: int
    converged: bool
    objectives: np.ndarray
    set_con: np.ndarray
    set_cat: np.ndarray

    @property
    def front(self) -> Front2D:
        return Front2D.from_points(self.objectives)

    def to_dict(self) -> dict:
        return {
            "format": REFERENCE_FORMAT,
            "version": REFERENCE_VERSION,
            "problem": self.problem,
            "seed": self.seed,
            "population": self.population,
            "generations": self.generations,
            "n_samples": self.n_samples,
            "alpha": list(self.alpha),
            "evaluations": self.evaluations,
            "converged": self.converged,
            "objectives": self.objectives.tolist(),
            "set_con": self.set_con.tolist(),
            "set_cat": self.set_cat.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ReferenceArtifact":
        if payload.get("format") != REFERENCE_FORMAT:
            raise ValueError(f"not a reference artifact: format={payload.get('format')!r}")
        if payload.get("version") != REFERENCE_VERSION:
            raise ValueError(
                f"unsupported reference artifact version {payload.get('version')!r}"
            )
        return cls(
            problem=payload["problem"],
            seed=int(payload["seed"]),
            population=int(payload["population"]),
            generations=int(payload["generations"]),
            n_samples=int(payload["n_samples"]),
            alpha=tuple(float(a) for a in payload["alpha"]),
            evaluations=int(payload["evaluations"]),
            converged=bool(payload["converged"]),
            objectives=np.asarray(payload["objectives"], dtype=float).reshape(-1, len(payload["alpha"])),
            set_con=np.asarray(payload["set_con"], dtype=float),
            set_cat=np.asarray(payload["set_cat"], dtype=int),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceArtifact":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _unique_sorted_front(
    objectives: np.ndarray, con: np.ndarray, cat: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Drop duplicate designs and impose a deterministic row order."""
    seen: set[tuple[bytes, bytes]] = set()
    keep: list[int] = []
    for i in range(objectives.shape[0]):
        key = (con[i].tobytes(), cat[i].tobytes())
        if key not in seen:
            seen.add(key)
            keep.append(i)
    objectives = objectives[keep]
    con = con[keep]
    cat = cat[keep]
    keys = [cat[:, j] for j in reversed(range(cat.shape[1]))]
    keys += [con[:, j] for j in reversed(range(con.shape[1]))]
    keys += [objectives[:, j] for j in reversed(range(objectives.shape[1]))]
    order = np.lexsort(keys)
    return objectives[order], con[order], cat[order]


def reference_solve(
    problem: BenchmarkProblem,
    seed: int | None = None,
    population: int | None = None,
    generations: int | None = None,
    n_samples: int | None = None,
) -> ReferenceArtifact:
    """Solve a benchmark on true-model quantiles, without surrogates.

    Runs the genetic optimizer directly on the quantile objectives under a
    frozen common-random-numbers context, then extracts the distinct rank-1
    designs.  The same seed always produces an identical artifact.

    Args:
        problem: Benchmark to solve.
        seed: Run seed; defaults to the benchmark's reference seed.
        population: Population size; defaults to the benchmark's reference
            scale.
        generations: Generation cap; defaults to the benchmark's reference
            scale.
        n_samples: Monte Carlo sample count; defaults to the benchmark's.

    Returns:
        The reference artifact.
    """
    seed = problem.reference_seed if seed is None else int(seed)
    population = problem.reference_population if population is None else int(population)
    generations = problem.reference_generations if generations is None else int(generations)
    n_samples = problem.n_samples if n_samples is None else int(n_samples)
    crn = CrnContext.create(problem.spec, n_samples=n_samples, seed=seed)
    counter = EvalCounter()
    objective = true_quantile_objective(problem.model, problem.spec, crn, counter)
    config = GaConfig(population=population, max_generations=generations, seed=seed)
    result = run_nsga2(objective, problem.spec, config)
    objectives, con, cat = _unique_sorted_front(
        result.front_objectives, result.front_con, result.front_cat
    )
    return ReferenceArtifact(
        problem=problem.name,
        seed=seed,
        population=population,
        generations=generations,
        n_samples=n_samples,
        alpha=problem.spec.alpha,
        evaluations=counter.count,
        converged=result.converged,
        objectives=objectives,
        set_con=con,
        set_cat=cat,
    )


def reference_data_path(name: str):
    """Packaged-resource path of a shipped reference artifact."""
    return resources.files("qmoro").joinpath("reference_data", f"{name}.json")


def load_reference(name: str) -> ReferenceArtifact:
    """Load a shipped reference artifact by benchmark name.

    Args:
        name: Benchmark name, e.g. ``"example1"``.

    Returns:
        The packaged artifact.

    Raises:
        FileNotFoundError: If no artifact for that name ships with the
            package.
    """
    path = reference_data_path(name)
    if not path.is_file():
        raise FileNotFoundError(
            f"no packaged reference artifact for {name!r}; generate one with "
            f"the 'bench reference' command"
        )
    with path.open("r", encoding="utf-8") as fh:
        return ReferenceArtifact.from_dict(json.load(fh))
