"""Tests for problem definitions: variables, distributions, models, constraints."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qmoro.problem import (
    CategoricalVar,
    ContinuousVar,
    EvalCounter,
    EvaluationError,
    MixedPoint,
    ObjectiveModel,
    ProblemSpec,
    RandomVarSpec,
    check_feasible,
    constraint_violations,
    evaluate,
    external_command_model,
    problem_from_config,
    register_model,
)


def make_spec(constraints=(), design_noise=None):
    return ProblemSpec(
        name="toy",
        continuous=(ContinuousVar("d1", 0.0, 5.0), ContinuousVar("d2", 0.0, 3.0)),
        categorical=(CategoricalVar("d3", ("1", "2", "3")),),
        n_objectives=2,
        alpha=(0.9, 0.9),
        design_noise=design_noise,
        constraints=constraints,
    )


class TestVariables:
    def test_continuous_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            ContinuousVar("x", 2.0, 2.0)

    def test_continuous_rejects_non_finite_bounds(self):
        with pytest.raises(ValueError):
            ContinuousVar("x", 0.0, np.inf)

    def test_categorical_needs_two_levels(self):
        with pytest.raises(ValueError):
            CategoricalVar("c", ("only",))

    def test_categorical_rejects_duplicate_labels(self):
        with pytest.raises(ValueError):
            CategoricalVar("c", ("a", "a"))

    def test_mixed_point_is_hashable_and_convertible(self):
        p = MixedPoint.from_arrays(np.array([1.0, 2.0]), np.array([0, 2]))
        assert p == MixedPoint((1.0, 2.0), (0, 2))
        assert {p: "ok"}[MixedPoint((1.0, 2.0), (0, 2))] == "ok"
        np.testing.assert_array_equal(p.con_array(), [1.0, 2.0])
        np.testing.assert_array_equal(p.cat_array(), [0, 2])


class TestRandomVarSpec:
    def test_rejects_unknown_family(self):
        with pytest.raises(ValueError):
            RandomVarSpec("triangular", 0.0, 1.0)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            RandomVarSpec("normal", 0.0, 0.0)

    def test_rejects_nonpositive_lognormal_mean(self):
        with pytest.raises(ValueError):
            RandomVarSpec("lognormal", -1.0, 1.0)

    def test_uniform_uses_bounds_parameterization(self):
        assert RandomVarSpec("uniform", 0.0, 1.0).parameterization == "bounds"
        assert RandomVarSpec("gumbel", 1.0, 0.04).parameterization == "mean-variance"

    @given(
        family=st.sampled_from(["uniform", "normal", "lognormal", "gumbel"]),
        a=st.floats(0.1, 50.0),
        b=st.floats(0.1, 50.0),
    )
    def test_round_trips_through_serialization(self, family, a, b):
        if family == "uniform":
            spec = RandomVarSpec(family, min(a, b) - 1.0, max(a, b) + 1.0, name="v")
        else:
            spec = RandomVarSpec(family, a, b, name="v")
        assert RandomVarSpec.from_dict(spec.to_dict()) == spec


class TestEvaluate:
    def model(self):
        return ObjectiveModel(
            name="sum",
            n_objectives=2,
            fn=lambda con, cat: np.column_stack([con.sum(axis=1), cat.sum(axis=1)]),
        )

    def test_returns_one_row_per_point_and_counts(self):
        counter = EvalCounter()
        out = evaluate(self.model(), [[1.0, 2.0], [3.0, 4.0]], [[0], [1]], counter)
        np.testing.assert_allclose(out, [[3.0, 0.0], [7.0, 1.0]])
        assert counter.count == 2

    def test_two_calls_are_bit_identical(self):
        rng = np.random.default_rng(7)
        con = rng.uniform(0, 5, size=(100, 3))
        cat = rng.integers(0, 3, size=(100, 1))
        model = ObjectiveModel(
            "smooth", 2,
            lambda c, k: np.column_stack([np.sin(c).sum(axis=1) + k[:, 0], np.cos(c).prod(axis=1)]),
        )
        first = evaluate(model, con, cat)
        second = evaluate(model, con, cat)
        assert np.array_equal(first, second)

    def test_non_finite_output_aborts_with_point_identity(self):
        bad = ObjectiveModel(
            "bad", 1, lambda con, cat: np.where(con[:, :1] > 0.5, np.nan, 1.0)
        )
        with pytest.raises(EvaluationError, match=r"con=\[0\.75\]"):
            evaluate(bad, [[0.25], [0.75]], [[0], [0]])

    def test_mismatched_batch_sizes_rejected(self):
        with pytest.raises(ValueError):
            evaluate(self.model(), [[1.0, 2.0]], [[0], [1]])


class TestFeasibility:
    def g1(self, con, cat):
        return (con[:, 0] - 5.0) ** 2 + con[:, 1] ** 2 - 25.0

    def g2(self, con, cat):
        return -((con[:, 0] - 8.0) ** 2) - (con[:, 1] + 3.0) ** 2 + 7.7

    def test_all_zero_violations_iff_feasible(self):
        spec = make_spec(constraints=(self.g1, self.g2))
        feasible, violations = check_feasible(spec, MixedPoint((0.0, 0.0), (0,)))
        assert feasible
        np.testing.assert_array_equal(violations, [0.0, 0.0])

    def test_violation_is_clipped_constraint_value(self):
        spec = make_spec(constraints=(self.g1,))
        feasible, violations = check_feasible(spec, MixedPoint((5.0, 6.0), (0,)))
        assert not feasible
        np.testing.assert_allclose(violations, [11.0])

    def test_unconstrained_problem_is_always_feasible(self):
        spec = make_spec()
        feasible, violations = check_feasible(spec, MixedPoint((4.0, 2.0), (2,)))
        assert feasible
        assert violations.size == 0

    def test_batch_violations_shape(self):
        spec = make_spec(constraints=(self.g1, self.g2))
        out = constraint_violations(spec, np.zeros((4, 2)), np.zeros((4, 1), dtype=int))
        assert out.shape == (4, 2)


class TestProblemSpecValidation:
    def test_alpha_must_match_objectives(self):
        with pytest.raises(ValueError):
            ProblemSpec(
                name="bad",
                continuous=(ContinuousVar("x", 0, 1),),
                categorical=(),
                n_objectives=2,
                alpha=(0.9,),
            )

    def test_alpha_must_be_in_open_interval(self):
        with pytest.raises(ValueError):
            ProblemSpec(
                name="bad",
                continuous=(ContinuousVar("x", 0, 1),),
                categorical=(),
                n_objectives=1,
                alpha=(1.0,),
            )

    def test_design_noise_alignment_enforced(self):
        with pytest.raises(ValueError):
            make_spec(design_noise=(RandomVarSpec("normal", 0.0, 0.01),))

    def test_level_labels_lookup(self):
        spec = make_spec()
        assert spec.level_labels((2,)) == ("3",)

    def test_counts(self):
        spec = ProblemSpec(
            name="counts",
            continuous=(ContinuousVar("a", 0, 1), ContinuousVar("b", 0, 1)),
            categorical=(CategoricalVar("c", ("x", "y")),),
            n_objectives=1,
            alpha=(0.5,),
            environmental=(RandomVarSpec("uniform", 0, 1),),
        )
        assert spec.n_design_vars == 3
        assert spec.n_augmented_vars == 4
        assert not spec.has_design_noise


class TestConfigLoading:
    def config(self):
        return {
            "name": "configured",
            "variables": [
                {"name": "d1", "kind": "continuous", "bounds": [0.0, 5.0]},
                {"name": "d3", "kind": "categorical", "levels": ["1", "2"]},
            ],
            "objective": "registered_toy",
            "alpha": 0.9,
        }

    def setup_method(self):
        register_model(
            "registered_toy",
            lambda: ObjectiveModel("registered_toy", 1, lambda c, k: c.sum(axis=1, keepdims=True)),
        )

    def test_builds_spec_and_model(self):
        spec, model = problem_from_config(self.config())
        assert spec.n_continuous == 1 and spec.n_categorical == 1
        assert model.n_objectives == 1
        assert spec.alpha == (0.9,)

    def test_unknown_keys_rejected(self):
        config = self.config() | {"typo_key": 1}
        with pytest.raises(ValueError, match="typo_key"):
            problem_from_config(config)

    def test_unknown_model_rejected(self):
        config = self.config() | {"objective": "no_such_model"}
        with pytest.raises(ValueError, match="no_such_model"):
            problem_from_config(config)

    def test_unknown_constraint_rejected(self):
        config = self.config() | {"constraints": ["no_such_constraint"]}
        with pytest.raises(ValueError, match="no_such_constraint"):
            problem_from_config(config)

    def test_noise_for_unknown_variable_rejected(self):
        config = self.config() | {
            "noise": [{"variable": "nope",
                       "distribution": {"family": "normal", "param1": 0.0, "param2": 0.01}}]
        }
        with pytest.raises(ValueError, match="nope"):
            problem_from_config(config)


class TestExternalCommandModel:
    def test_round_trip_through_subprocess(self):
        script = (
            "import sys, json\n"
            "for line in sys.stdin:\n"
            "    p = json.loads(line)\n"
            "    print(json.dumps([sum(p['con']), float(p['cat'][0])]))\n"
        )
        model = external_command_model(["python3", "-c", script], n_objectives=2)
        out = evaluate(model, [[1.0, 2.0], [3.0, 4.0]], [[5], [6]])
        np.testing.assert_allclose(out, [[3.0, 5.0], [7.0, 6.0]])
