import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phmix.model import (
    ExitStructure,
    MixtureModel,
    ModelError,
    ModelFormatError,
    StateSpace,
    SubGeneratorPair,
    dumps_model,
    exp_mixture,
    from_psi,
    h_matrix,
    loads_model,
    marshall_olkin,
    model_to_dict,
    validate,
)

A3 = np.array([[-3.0, 1.0, 2.0], [0.0, -2.0, 0.0], [0.0, 0.0, -1.0]])


def make(**overrides):
    kw = dict(A=A3, B=2 * A3, pi=[1.0, 0.0, 0.0], s=[0.5, 0.5, 0.5], closed_sets=[[1], [2]])
    kw.update(overrides)
    return MixtureModel.build(**kw)


class TestGenerators:
    def test_extended_generator_rows_sum_to_zero(self):
        pair = SubGeneratorPair(A3, 2 * A3)
        for Q in (pair.Q, pair.G):
            np.testing.assert_allclose(Q.sum(axis=1), 0.0, atol=1e-15)
            np.testing.assert_array_equal(Q[-1], 0.0)
        np.testing.assert_array_equal(pair.Q[:3, 3], [0.0, 2.0, 1.0])

    def test_from_psi_scales_rows(self):
        pair = from_psi([[-1.0, 1.0], [0.0, -2.0]], [2.0, 0.5])
        np.testing.assert_array_equal(pair.B, [[-2.0, 2.0], [0.0, -1.0]])

    def test_from_psi_identity(self):
        pair = from_psi(A3, np.ones(3))
        np.testing.assert_array_equal(pair.B, pair.A)

    def test_from_psi_zero_gives_stayer(self):
        pair = from_psi(A3, np.zeros(3))
        np.testing.assert_array_equal(pair.B, 0.0)
        model = MixtureModel(StateSpace.numbered(3), pair, [1, 0, 0], [0.5] * 3, ExitStructure.absorption_only(3))
        assert any("B: singular" in v for v in validate(model))
        assert validate(model, require_absorbing=False) == []

    @pytest.mark.parametrize("psi", [[1.0, 2.0], [-1.0, 1.0, 1.0]])
    def test_from_psi_rejects(self, psi):
        with pytest.raises(ModelError):
            from_psi(A3, psi)

    def test_shapes_checked(self):
        with pytest.raises(ModelError):
            SubGeneratorPair(np.eye(2), np.eye(3))
        with pytest.raises(ModelError):
            SubGeneratorPair(np.ones((2, 3)), np.ones((2, 3)))


class TestExitStructure:
    def test_h_matrix_example(self):
        exits = ExitStructure.from_transient(3, [[1], [2]])
        np.testing.assert_array_equal(h_matrix(exits, 0), np.diag([1.0, 0.0, 1.0]))
        np.testing.assert_array_equal(h_matrix(exits, 1), np.diag([1.0, 1.0, 0.0]))

    def test_absorption_only_gives_identity(self):
        np.testing.assert_array_equal(h_matrix(ExitStructure.absorption_only(4), 0), np.eye(4))

    def test_full_complement_rejected(self):
        with pytest.raises(ModelError):
            ExitStructure.from_transient(2, [[0, 1]])

    def test_index_range(self):
        exits = ExitStructure.from_transient(3, [[1]])
        with pytest.raises(IndexError):
            h_matrix(exits, 1)

    @settings(max_examples=40)
    @given(st.integers(2, 7).flatmap(lambda m: st.tuples(st.just(m), st.lists(st.sets(st.integers(0, m - 1), max_size=m - 1), min_size=1, max_size=3))))
    def test_h_is_diagonal_idempotent_and_commuting(self, case):
        m, sets = case
        exits = ExitStructure.from_transient(m, sets)
        hs = [h_matrix(exits, k) for k in range(exits.n)]
        for H in hs:
            np.testing.assert_array_equal(H @ H, H)
            np.testing.assert_array_equal(H, np.diag(np.diag(H)))
        for H, K in zip(hs, hs[1:]):
            np.testing.assert_array_equal(H @ K, K @ H)

    def test_survivors(self):
        exits = ExitStructure.from_transient(4, [[1, 3], [2, 3]])
        np.testing.assert_array_equal(exits.survivors, [0])


class TestValidate:
    @pytest.mark.parametrize("factory", [exp_mixture, marshall_olkin])
    def test_examples_valid(self, factory):
        assert validate(factory()) == []

    def test_pi_sum(self):
        problems = validate(make(pi=[0.9, 0.0, 0.0]))
        assert len(problems) == 1 and "pi" in problems[0]

    def test_positive_diagonal(self):
        A = A3.copy()
        A[2, 2] = 0.5
        assert any("diagonal must be <= 0" in v for v in validate(make(A=A)))

    def test_negative_offdiagonal_and_row_sum(self):
        A = A3.copy()
        A[0, 1] = -1.0
        A[0, 0] = -1.0
        problems = validate(make(A=A))
        assert any("off-diagonal" in v for v in problems)

    def test_row_sum_positive(self):
        A = A3.copy()
        A[0, 0] = -2.0
        assert any("row '1' sums to" in v for v in validate(make(A=A)))

    def test_closedness(self):
        B = 2 * A3
        B[1, 0] = 1.0  # leaves exit set 1 from state 2
        B[1, 1] = -5.0
        problems = validate(make(B=B))
        assert any("exit set 1 is not closed" in v for v in problems)

    def test_intersection_only_absorbing(self):
        problems = validate(make(closed_sets=[[1, 2], [2]]))
        assert any("intersect only" in v for v in problems)

    def test_absorbing_state_required(self):
        model = MixtureModel(
            StateSpace.numbered(3), SubGeneratorPair(A3, A3), [1, 0, 0], [0.5] * 3, ExitStructure(3, (frozenset({1}),))
        )
        assert any("does not contain the absorbing" in v for v in validate(model))

    def test_pi_inside_exit_set(self):
        problems = validate(make(pi=[0.5, 0.5, 0.0]))
        assert any("lies in exit set 1" in v for v in problems)

    def test_switching_range(self):
        assert any(v.startswith("s:") for v in validate(make(s=[0.5, 1.5, 0.5])))

    def test_check_raises_with_violations(self):
        with pytest.raises(ModelError) as info:
            make(pi=[0.9, 0, 0]).check()
        assert info.value.violations

    def test_structural_errors(self):
        with pytest.raises(ModelError):
            make(pi=[1.0, 0.0])
        with pytest.raises(ModelError):
            StateSpace(("a", "a"))


class TestModelFiles:
    @pytest.mark.parametrize("factory", [exp_mixture, marshall_olkin])
    def test_round_trip_exact(self, factory):
        model = factory()
        again = loads_model(dumps_model(model))
        for name in ("A", "B", "pi0", "s0"):
            np.testing.assert_array_equal(getattr(again, name), getattr(model, name))
        assert again.exits == model.exits
        assert again.space == model.space

    def test_psi_variant(self):
        obj = model_to_dict(exp_mixture())
        A = np.array(obj.pop("B"))
        obj["psi"] = [2.0, 1.0, 0.5]
        model = loads_model(json.dumps(obj))
        np.testing.assert_array_equal(model.B, np.diag([2.0, 1.0, 0.5]) @ np.array(obj["A"]))
        assert A.shape == (3, 3)

    def test_absorbing_label_allowed_in_closed_sets(self):
        obj = model_to_dict(exp_mixture())
        obj["closed_sets"] = [["2", "D"], ["3"]]
        assert loads_model(json.dumps(obj)).exits == exp_mixture().exits

    def test_missing_closed_sets_means_absorption_only(self):
        obj = model_to_dict(exp_mixture())
        del obj["closed_sets"]
        assert loads_model(json.dumps(obj)).n == 1

    def test_syntax_error_has_position(self):
        with pytest.raises(ModelFormatError) as info:
            loads_model('{\n  "states": [,\n}')
        assert info.value.line == 2 and info.value.column is not None

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda o: o.pop("A"),
            lambda o: o.update(psi=[1, 1, 1]),
            lambda o: o.pop("B"),
            lambda o: o.update(A=[[1, 2], [3, 4]]),
            lambda o: o.update(pi=[1, 0]),
            lambda o: o.update(s="x"),
            lambda o: o.update(closed_sets=[["9"]]),
            lambda o: o.update(states="abc"),
            lambda o: o.update(closed_sets=[["1", "2", "3"]]),
        ],
    )
    def test_format_errors(self, mutate):
        obj = model_to_dict(exp_mixture())
        mutate(obj)
        with pytest.raises(ModelFormatError):
            loads_model(json.dumps(obj))

    def test_nonfinite_rejected(self):
        text = dumps_model(exp_mixture()).replace("0.3", "NaN", 1)
        with pytest.raises(ModelFormatError):
            loads_model(text)


class TestExamples:
    def test_exp_mixture_matrices(self):
        model = exp_mixture((1.0, 2.0), (3.0, 4.0))
        np.testing.assert_array_equal(model.A, [[-3, 1, 2], [0, -2, 0], [0, 0, -1]])
        np.testing.assert_array_equal(model.B, [[-7, 3, 4], [0, -4, 0], [0, 0, -3]])
        np.testing.assert_array_equal(model.pi0, [1, 0, 0])

    def test_marshall_olkin_matrices(self):
        model = marshall_olkin((1.0, 2.0, 0.5), (2.0, 3.0, 1.5))
        np.testing.assert_array_equal(model.A, [[-3.5, 1, 2], [0, -2.5, 0], [0, 0, -1.5]])
        np.testing.assert_array_equal(model.B, [[-6.5, 2, 3], [0, -4.5, 0], [0, 0, -3.5]])

    @pytest.mark.parametrize(
        "call",
        [
            lambda: exp_mixture((0.0, 1.0)),
            lambda: exp_mixture(p=(0.3, 1.0, 0.3)),
            lambda: marshall_olkin((1.0, -1.0, 0.0)),
            lambda: marshall_olkin(b=(1.0, 1.0, -0.1)),
        ],
    )
    def test_bad_parameters(self, call):
        with pytest.raises(ModelError):
            call()
