import warnings

import numpy as np
import pytest

from crafair.errors import ArgumentError, EvaluationError
from crafair.fairness import (
    FairnessSpec,
    SkippedStrataWarning,
    empirical_fairness,
    soft_fairness,
    soft_fairness_grad,
)
from crafair.oracle import fd_gradient

from .helpers import make_dataset
from .test_data import HAND_PREDS, hand

SP = FairnessSpec("S", "0", "1")
EO = FairnessSpec("S", "0", "1", ("Y",), "Y")


def eo_fixture():
    # within Y=1: s1 rate 2/2, s0 rate 1/2; within Y=0: 1/5 for both groups
    rows, preds = [], []
    rows += [(1, 0, 1)] * 2
    preds += [1, 1]
    rows += [(0, 0, 1)] * 2
    preds += [1, 0]
    for s in (0, 1):
        rows += [(s, 0, 0)] * 5
        preds += [1, 0, 0, 0, 0]
    return make_dataset(("S", "U", "Y"), rows, admissible=("Y",)), np.array(preds, float)


class TestSpec:
    def test_modes(self):
        assert SP.mode == "statistical_parity"
        assert EO.mode == "equal_opportunity"
        assert FairnessSpec("S", "0", "1", ("U",), "Y").mode == "conditional"

    def test_inconsistent_mode(self):
        with pytest.raises(ArgumentError):
            FairnessSpec("S", "0", "1", (), "Y", mode="equal_opportunity")

    def test_protected_not_admissible(self):
        with pytest.raises(ArgumentError):
            FairnessSpec("S", "0", "1", ("S",))


class TestEmpirical:
    def test_hand_dataset(self):
        fv = empirical_fairness(hand(), HAND_PREDS, SP)
        assert fv.value == pytest.approx(0.5)
        assert fv.signs[()] == "s1"
        assert fv.per_a_terms[()] == pytest.approx(0.5)

    def test_equal_opportunity(self):
        d, p = eo_fixture()
        fv = empirical_fairness(d, p, EO)
        assert fv.value == pytest.approx(0.25)
        assert fv.per_a_terms[("1",)] == pytest.approx(0.5)
        assert fv.per_a_terms[("0",)] == pytest.approx(0.0)
        assert fv.signs[("0",)] == "tie"

    @pytest.mark.parametrize("c", [0.0, 1.0])
    def test_constant(self, c):
        assert empirical_fairness(hand(), np.full(8, c), SP).value == 0

    def test_requires_hard(self):
        with pytest.raises(ArgumentError):
            empirical_fairness(hand(), np.full(8, 0.5), SP)

    def test_missing_group(self):
        d = make_dataset(("S", "Y"), [(1, 0), (1, 1)])
        with pytest.raises(EvaluationError, match="both groups"):
            empirical_fairness(d, [0, 1], SP)

    def test_skipped_stratum_warns(self):
        d = make_dataset(("S", "Y"), [(1, 0), (0, 0), (1, 1)], admissible=("Y",))
        with pytest.warns(SkippedStrataWarning):
            fv = empirical_fairness(d, [1, 0, 1], EO)
        assert fv.value == 1.0 and fv.skipped == (("1",),)

    def test_extra_protected_value(self):
        from crafair.data import Column, Dataset, Schema

        schema = Schema((Column("S", ("0", "1", "2")), Column("Y", ("0", "1"))), "Y", "S", "0", "1")
        d = Dataset(schema, np.array([[0, 0], [1, 1], [2, 1]]))
        with pytest.raises(EvaluationError, match="besides"):
            empirical_fairness(d, [0, 1, 1], SP)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            rows = rng.integers(0, 2, size=(30, 3))
            rows[0, 0], rows[1, 0] = 0, 1
            rows[0, 2] = rows[1, 2] = 0
            rows[2, 0], rows[3, 0] = 0, 1
            rows[2, 2] = rows[3, 2] = 1
            d = make_dataset(("S", "U", "Y"), rows, admissible=("Y",))
            p = rng.integers(0, 2, 30).astype(float)
            for spec in (SP, EO):
                v = empirical_fairness(d, p, spec).value
                flipped = FairnessSpec("S", "1", "0", spec.admissible, "Y")
                assert empirical_fairness(d, p, flipped).value == pytest.approx(v, abs=1e-15)
                assert 0 <= v <= 1

    def test_independent_predictions_near_zero(self):
        rng = np.random.default_rng(12)
        n = 50_000
        rows = np.column_stack([rng.integers(0, 2, n), rng.integers(0, 2, n), rng.integers(0, 2, n)])
        d = make_dataset(("S", "U", "Y"), rows, admissible=("Y",))
        h = (rng.random(n) < np.where(rows[:, 2] == 1, 0.7, 0.2)).astype(float)
        assert empirical_fairness(d, h, EO).value < 0.02


class TestSoft:
    def test_hard_equivalence(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            d, _ = eo_fixture()
            p = rng.integers(0, 2, d.n_rows).astype(float)
            for spec in (SP, EO):
                assert soft_fairness(d, p, spec).value == empirical_fairness(d, p, spec).value

    def test_half_is_zero(self):
        assert soft_fairness(hand(), np.full(8, 0.5), SP).value == 0

    def test_range_checked(self):
        with pytest.raises(ArgumentError):
            soft_fairness(hand(), np.full(8, 1.5), SP)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        checked = 0
        while checked < 25:
            rows = rng.integers(0, 2, size=(30, 3))
            rows[:4, 0] = [0, 1, 0, 1]
            rows[:4, 2] = [0, 0, 1, 1]
            d = make_dataset(("S", "U", "Y"), rows, admissible=("Y",))
            p = rng.uniform(0.05, 0.95, 30)
            fv, g = soft_fairness_grad(d, p, EO)
            if min(abs(x) for x in fv.per_a_terms.values()) < 1e-3:
                continue  # too close to a kink
            num = fd_gradient(lambda q: soft_fairness(d, q, EO).value, p, eps=1e-6)
            scale = np.maximum(np.maximum(np.abs(num), np.abs(g)), 1e-6)
            assert np.max(np.abs(g - num) / scale) < 1e-4
            checked += 1

    def test_lipschitz_per_coordinate(self):
        d, p = eo_fixture()
        p = np.clip(p, 0.1, 0.9)
        _, g = soft_fairness_grad(d, p, EO)
        t_n = {("1",): (2, 2), ("0",): (5, 5)}
        ys = d.y
        for i in range(d.n_rows):
            n_cell = t_n[(str(ys[i]),)][0]
            assert abs(g[i]) <= 1 / (n_cell * 2) + 1e-12

    def test_no_warning_when_complete(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            soft_fairness(hand(), np.full(8, 0.3), SP)
