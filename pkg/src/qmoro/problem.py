"""Mixed-variable robust optimization problem definitions.

A problem couples a bounded mixed continuous-categorical design space with
random inputs (design-conditional noise and environmental variables), a
vectorized deterministic cost model over the joint design-plus-random space,
and analytic constraints evaluated on the design variables only.
"""

from __future__ import annotations

import json
import math
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "FAMILIES",
    "CategoricalVar",
    "ContinuousVar",
    "EvalCounter",
    "EvaluationError",
    "MixedPoint",
    "ObjectiveModel",
    "ProblemSpec",
    "RandomVarSpec",
    "check_feasible",
    "constraint_violations",
    "evaluate",
    "external_command_model",
    "problem_from_config",
    "register_constraint",
    "register_model",
]

FAMILIES: tuple[str, ...] = ("uniform", "normal", "lognormal", "gumbel")

#: Batch constraint callable: (con (n, M_con), cat (n, M_cat)) -> (n,) values,
#: feasible iff value <= 0.
Constraint = Callable[[np.ndarray, np.ndarray], np.ndarray]


class EvaluationError(RuntimeError):
    """Raised when a cost model returns a non-finite value."""


@dataclass(frozen=True)
class ContinuousVar:
    """Bounded continuous design variable.

    Args:
        name: Variable identifier used in exported artifacts.
        lower: Finite lower bound in problem units.
        upper: Finite upper bound, strictly greater than ``lower``.
    """

    name: str
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError(f"bounds of {self.name!r} must be finite")
        if not self.lower < self.upper:
            raise ValueError(
                f"lower bound of {self.name!r} must be strictly below upper "
                f"({self.lower} >= {self.upper})"
            )

    @property
    def range(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class CategoricalVar:
    """Unordered categorical design variable with labelled levels.

    Levels carry no ordering semantics; they are addressed internally by
    0-based index into ``levels``.

    Args:
        name: Variable identifier used in exported artifacts.
        levels: Ordered, unique level labels (at least two).
    """

    name: str
    levels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(str(s) for s in self.levels))
        if len(self.levels) < 2:
            raise ValueError(f"{self.name!r} needs at least two levels")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"{self.name!r} has duplicate level labels")

    @property
    def n_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class RandomVarSpec:
    """Scalar random variable given by a family name and two parameters.

    ``uniform`` is parameterized by bounds ``(param1, param2) = (lower,
    upper)``; the remaining families by ``(mean, variance)``.  Lognormal and
    Gumbel are moment-matched: the stored mean and variance are converted to
    the family's native parameters when sampling.

    Args:
        family: One of :data:`FAMILIES`.
        param1: Lower bound (uniform) or mean (other families).
        param2: Upper bound (uniform) or variance (other families).
        name: Optional identifier for diagnostics and artifacts.
    """

    family: str
    param1: float
    param2: float
    name: str = ""

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not (math.isfinite(self.param1) and math.isfinite(self.param2)):
            raise ValueError(f"parameters of {self.name or self.family!r} must be finite")
        if self.family == "uniform":
            if not self.param1 < self.param2:
                raise ValueError("uniform bounds must satisfy lower < upper")
        else:
            if self.param2 <= 0:
                raise ValueError(f"{self.family} variance must be positive")
            if self.family == "lognormal" and self.param1 <= 0:
                raise ValueError("lognormal mean must be positive")

    @property
    def parameterization(self) -> str:
        return "bounds" if self.family == "uniform" else "mean-variance"

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "param1": self.param1,
            "param2": self.param2,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RandomVarSpec":
        return cls(
            family=payload["family"],
            param1=float(payload["param1"]),
            param2=float(payload["param2"]),
            name=payload.get("name", ""),
        )


@dataclass(frozen=True)
class MixedPoint:
    """A point of the design or augmented space.

    Coordinates are stored as tuples so points are hashable and usable as
    dictionary keys (e.g. for evaluation caches and deduplication).

    Args:
        con: Continuous coordinates.
        cat: 0-based categorical level indices.
    """

    con: tuple[float, ...]
    cat: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "con", tuple(float(v) for v in self.con))
        object.__setattr__(self, "cat", tuple(int(v) for v in self.cat))

    @classmethod
    def from_arrays(cls, con: np.ndarray, cat: np.ndarray) -> "MixedPoint":
        return cls(con=tuple(np.asarray(con, dtype=float).ravel()),
                   cat=tuple(np.asarray(cat, dtype=int).ravel()))

    def con_array(self) -> np.ndarray:
        return np.asarray(self.con, dtype=float)

    def cat_array(self) -> np.ndarray:
        return np.asarray(self.cat, dtype=int)


@dataclass(frozen=True)
class ObjectiveModel:
    """Vectorized deterministic cost model over the augmented space.

    Args:
        name: Model identifier.
        n_objectives: Number of cost components returned per point.
        fn: Callable mapping ``(con (n, C), cat (n, K))`` to an ``(n, m)``
            array of costs.  Must be deterministic: identical inputs yield
            bit-identical outputs.
    """

    name: str
    n_objectives: int
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]


class EvalCounter:
    """Thread-safe counter of true-model evaluations."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self._count += int(n)

    @property
    def count(self) -> int:
        return self._count


@dataclass(frozen=True)
class ProblemSpec:
    """Full specification of a quantile-robust optimization problem.

    Args:
        name: Problem identifier.
        continuous: Continuous design variables.
        categorical: Categorical design variables.
        n_objectives: Number of cost functions to minimize.
        alpha: Quantile level per objective, each in (0, 1).
        design_noise: Per-continuous-variable noise distribution, aligned with
            ``continuous`` (``None`` entries mean the variable is
            deterministic).  A noise spec is centered on the current design
            value: mean-variance families realize ``mean = d + param1`` with
            variance ``param2``; uniform realizes bounds ``[d + param1,
            d + param2]``.
        environmental: Environmental random variables, independent of the
            design.
        constraints: Analytic batch constraints on the design variables only;
            a design is feasible iff every constraint value is <= 0.
        constraint_names: Optional labels aligned with ``constraints``.
    """

    name: str
    continuous: tuple[ContinuousVar, ...]
    categorical: tuple[CategoricalVar, ...]
    n_objectives: int
    alpha: tuple[float, ...]
    design_noise: tuple[RandomVarSpec | None, ...] = ()
    environmental: tuple[RandomVarSpec, ...] = ()
    constraints: tuple[Constraint, ...] = ()
    constraint_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "continuous", tuple(self.continuous))
        object.__setattr__(self, "categorical", tuple(self.categorical))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "environmental", tuple(self.environmental))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        noise = tuple(self.design_noise) if self.design_noise else (None,) * len(self.continuous)
        object.__setattr__(self, "design_noise", noise)
        if self.n_objectives < 1:
            raise ValueError("n_objectives must be >= 1")
        if len(self.alpha) != self.n_objectives:
            raise ValueError("alpha must provide one quantile level per objective")
        if any(not 0.0 < a < 1.0 for a in self.alpha):
            raise ValueError("every quantile level must lie strictly in (0, 1)")
        if len(self.design_noise) != len(self.continuous):
            raise ValueError("design_noise must align with continuous variables")
        if not self.continuous and not self.categorical:
            raise ValueError("the design space must contain at least one variable")
        if self.constraint_names and len(self.constraint_names) != len(self.constraints):
            raise ValueError("constraint_names must align with constraints")

    @property
    def n_continuous(self) -> int:
        return len(self.continuous)

    @property
    def n_categorical(self) -> int:
        return len(self.categorical)

    @property
    def n_design_vars(self) -> int:
        return self.n_continuous + self.n_categorical

    @property
    def n_environmental(self) -> int:
        return len(self.environmental)

    @property
    def n_augmented_vars(self) -> int:
        """Total variable count of the augmented space (design + environmental)."""
        return self.n_design_vars + self.n_environmental

    @property
    def has_design_noise(self) -> bool:
        return any(spec is not None for spec in self.design_noise)

    def continuous_bounds(self) -> np.ndarray:
        """Design-space bounds of the continuous variables, shape (M_con, 2)."""
        return np.array([[v.lower, v.upper] for v in self.continuous], dtype=float).reshape(-1, 2)

    def categorical_counts(self) -> tuple[int, ...]:
        return tuple(v.n_levels for v in self.categorical)

    def level_labels(self, cat_indices: Sequence[int]) -> tuple[str, ...]:
        """Map 0-based level indices to their labels, one per categorical variable."""
        return tuple(v.levels[int(i)] for v, i in zip(self.categorical, cat_indices))


def evaluate(
    model: ObjectiveModel,
    con: np.ndarray,
    cat: np.ndarray,
    counter: EvalCounter | None = None,
) -> np.ndarray:
    """Evaluate the cost model on a batch of augmented-space points.

    Args:
        model: Cost model to evaluate.
        con: Continuous coordinates, shape (n, C) or (C,).
        cat: Categorical level indices, shape (n, K) or (K,).
        counter: Optional evaluation counter incremented by the batch size.

    Returns:
        Array of shape (n, m) with one cost vector per point.

    Raises:
        EvaluationError: If any returned cost is non-finite; the message
            identifies the offending point.
    """
    con = np.atleast_2d(np.asarray(con, dtype=float))
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    if con.shape[0] != cat.shape[0]:
        raise ValueError("con and cat must contain the same number of points")
    values = np.asarray(model.fn(con, cat), dtype=float)
    values = values.reshape(con.shape[0], model.n_objectives)
    if not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values))[0][0])
        raise EvaluationError(
            f"model {model.name!r} returned a non-finite cost at "
            f"con={con[bad].tolist()} cat={cat[bad].tolist()}"
        )
    if counter is not None:
        counter.add(con.shape[0])
    return values


def constraint_violations(spec: ProblemSpec, con: np.ndarray, cat: np.ndarray) -> np.ndarray:
    """Per-constraint violations max(f_j(d), 0) for a batch of designs.

    Args:
        spec: Problem specification.
        con: Continuous design coordinates, shape (n, M_con) or (M_con,).
        cat: Categorical level indices, shape (n, M_cat) or (M_cat,).

    Returns:
        Array of shape (n, n_constraints); all-zero rows are feasible.
    """
    con = np.atleast_2d(np.asarray(con, dtype=float))
    cat = np.atleast_2d(np.asarray(cat, dtype=int))
    if not spec.constraints:
        return np.zeros((con.shape[0], 0))
    columns = [np.maximum(np.asarray(g(con, cat), dtype=float).reshape(-1), 0.0)
               for g in spec.constraints]
    return np.column_stack(columns)


def check_feasible(spec: ProblemSpec, d: MixedPoint) -> tuple[bool, np.ndarray]:
    """Feasibility of a single design point.

    Args:
        spec: Problem specification.
        d: Design point.

    Returns:
        ``(feasible, violations)`` where ``violations[j] = max(f_j(d), 0)``;
        the point is feasible iff every violation is zero.
    """
    violations = constraint_violations(spec, d.con_array()[None, :], d.cat_array()[None, :])[0]
    return bool(np.all(violations == 0.0)), violations


def external_command_model(
    command: Sequence[str],
    n_objectives: int,
    name: str = "external",
) -> ObjectiveModel:
    """Wrap an external executable as a cost model.

    The command is spawned once per batch.  It receives one JSON line per
    point on stdin, ``{"con": [...], "cat": [...]}``, and must write one JSON
    line per point to stdout: the list of m costs.

    Args:
        command: Executable and arguments.
        n_objectives: Number of costs per point the command emits.
        name: Model identifier.

    Returns:
        An :class:`ObjectiveModel` delegating evaluation to the command.
    """
    command = tuple(str(c) for c in command)

    def fn(con: np.ndarray, cat: np.ndarray) -> np.ndarray:
        lines = "\n".join(
            json.dumps({"con": list(map(float, c)), "cat": list(map(int, k))})
            for c, k in zip(con, cat)
        )
        proc = subprocess.run(
            command, input=lines + "\n", capture_output=True, text=True, check=True
        )
        rows = [json.loads(line) for line in proc.stdout.splitlines() if line.strip()]
        if len(rows) != con.shape[0]:
            raise EvaluationError(
                f"external model {name!r} returned {len(rows)} rows for {con.shape[0]} points"
            )
        return np.asarray(rows, dtype=float)

    return ObjectiveModel(name=name, n_objectives=n_objectives, fn=fn)


#: Registries for config-file lookup of built-in models and constraints.
MODEL_REGISTRY: dict[str, Callable[[], ObjectiveModel]] = {}
CONSTRAINT_REGISTRY: dict[str, Constraint] = {}


def register_model(name: str, factory: Callable[[], ObjectiveModel]) -> None:
    """Register a built-in cost model factory under ``name``."""
    MODEL_REGISTRY[name] = factory


def register_constraint(name: str, constraint: Constraint) -> None:
    """Register a named built-in constraint function."""
    CONSTRAINT_REGISTRY[name] = constraint


def _variable_from_config(entry: dict) -> ContinuousVar | CategoricalVar:
    kind = entry.get("kind")
    if kind == "continuous":
        return ContinuousVar(name=entry["name"], lower=float(entry["bounds"][0]),
                             upper=float(entry["bounds"][1]))
    if kind == "categorical":
        return CategoricalVar(name=entry["name"], levels=tuple(entry["levels"]))
    raise ValueError(f"unknown variable kind {kind!r}")


def problem_from_config(config: dict) -> tuple[ProblemSpec, ObjectiveModel]:
    """Build a problem and its model from a structured configuration mapping.

    The mapping uses variable arrays with ``{name, kind, bounds|levels}``, an
    ``objective`` selector (a registered model name or ``{"command": [...],
    "n_objectives": m}`` for an external-command model), optional per-variable
    ``noise`` distributions, ``environmental`` distributions, and constraint
    names referring to registered built-ins.

    Args:
        config: Parsed configuration mapping.

    Returns:
        ``(spec, model)`` ready for optimization.

    Raises:
        ValueError: On unknown keys, variable kinds, or registry misses.
    """
    known = {"name", "variables", "objective", "alpha", "noise", "environmental", "constraints"}
    unknown = set(config) - known
    if unknown:
        raise ValueError(f"unknown problem config keys: {sorted(unknown)}")

    variables = [_variable_from_config(v) for v in config.get("variables", [])]
    continuous = tuple(v for v in variables if isinstance(v, ContinuousVar))
    categorical = tuple(v for v in variables if isinstance(v, CategoricalVar))

    objective = config["objective"]
    if isinstance(objective, str):
        if objective not in MODEL_REGISTRY:
            raise ValueError(f"unknown objective model {objective!r}")
        model = MODEL_REGISTRY[objective]()
    else:
        model = external_command_model(
            objective["command"], int(objective["n_objectives"]),
            name=objective.get("name", "external"),
        )

    alpha = config.get("alpha", 0.9)
    if isinstance(alpha, (int, float)):
        alpha = (float(alpha),) * model.n_objectives

    noise_map = {entry["variable"]: RandomVarSpec.from_dict(entry["distribution"])
                 for entry in config.get("noise", [])}
    unknown_noise = set(noise_map) - {v.name for v in continuous}
    if unknown_noise:
        raise ValueError(f"noise refers to unknown variables: {sorted(unknown_noise)}")
    design_noise = tuple(noise_map.get(v.name) for v in continuous)

    environmental = tuple(RandomVarSpec.from_dict(entry)
                          for entry in config.get("environmental", []))

    constraint_names = tuple(config.get("constraints", []))
    missing = [c for c in constraint_names if c not in CONSTRAINT_REGISTRY]
    if missing:
        raise ValueError(f"unknown constraints: {missing}")
    constraints = tuple(CONSTRAINT_REGISTRY[c] for c in constraint_names)

    spec = ProblemSpec(
        name=config.get("name", model.name),
        continuous=continuous,
        categorical=categorical,
        n_objectives=model.n_objectives,
        alpha=tuple(alpha),
        design_noise=design_noise,
        environmental=environmental,
        constraints=constraints,
        constraint_names=constraint_names,
    )
    return spec, model
