import json

import numpy as np
import pytest

from crafair.causal_graph import DataCollectionDiagram, select_U
from crafair.cra import (
    AuxKind,
    AuxStats,
    ConsistentRange,
    ExternalSample,
    Strategy,
    StrategyChoice,
    choose_strategy,
    compile_bound,
    compute_range,
    estimate_aux,
    load_aux,
    range_equality,
    range_exact,
    range_missing_a,
    range_no_external,
    range_partial_u,
    save_aux,
    select_strategy,
)
from crafair.errors import ArgumentError, AuxCoverageError, BoundError, LoadError, StrategyError
from crafair.fairness import FairnessSpec, empirical_fairness
from crafair.oracle import Strategy as OStrategy, check_containment, random_instance
from crafair.synth import SelectionSpec

from .helpers import FIG4_PARENTS, cell_rows, fig4_base, make_dataset
from .sim import exact_pipeline, random_rule, reduction_gaps, syn_split

SP = FairnessSpec("S", "0", "1")
EO = FairnessSpec("S", "0", "1", ("Y",), "Y")

# s1 strata rates 0.8 and 0.6, s0 strata rates 0.3 and 0.5
FOUR_CELLS = {(1, 0): (5, 4), (1, 1): (5, 3), (0, 0): (10, 3), (0, 1): (2, 1)}


def four_cells():
    rows, preds = cell_rows(FOUR_CELLS)
    return make_dataset(("S", "U", "Y"), rows), preds


def halves(kind=AuxKind.U_GIVEN_SA):
    return AuxStats(kind, ("U",), {(s, (), (u,)): 0.5 for s in "01" for u in "01"})


class TestAuxStats:
    def test_normalisation_enforced(self):
        with pytest.raises(ArgumentError, match="sum"):
            AuxStats(AuxKind.U_GIVEN_SA, ("U",), {("0", (), ("0",)): 0.7, ("0", (), ("1",)): 0.7})
        with pytest.raises(ArgumentError, match="sum"):
            AuxStats(AuxKind.SU_JOINT, ("U",), {("0", (), ("0",)): 0.5})

    def test_tolerance(self):
        AuxStats(AuxKind.U_GIVEN_SA, ("U",), {("0", (), ("0",)): 0.5 + 5e-7, ("0", (), ("1",)): 0.5})

    def test_out_of_range(self):
        with pytest.raises(ArgumentError):
            AuxStats(AuxKind.U_GIVEN_SA, ("U",), {("0", (), ("0",)): 1.5, ("0", (), ("1",)): -0.5})

    def test_key_shape(self):
        with pytest.raises(ArgumentError):
            AuxStats(AuxKind.U_GIVEN_SA, ("U", "V"), {("0", (), ("0",)): 1.0})

    def test_aligned_marginalises(self):
        t = {(s, (), (u, v)): 0.25 for s in "01" for u in "01" for v in "01"}
        aux = AuxStats(AuxKind.U_GIVEN_SA, ("U", "V"), t)
        m = aux.aligned((), ("V",))
        assert m.kind is AuxKind.UPRIME_GIVEN_SA
        assert m.p("1", (), ("0",)) == pytest.approx(0.5)
        with pytest.raises(AuxCoverageError):
            aux.aligned((), ("W",))
        with pytest.raises(AuxCoverageError):
            aux.aligned(("Y",), ("U",))

    def test_json_roundtrip(self, tmp_path):
        aux = AuxStats(AuxKind.U_GIVEN_SA, ("U",), {(s, (y,), (u,)): 0.5 for s in "01" for y in "01" for u in "01"},
                       ("Y",))
        save_aux(aux, tmp_path / "a.json")
        assert load_aux(tmp_path / "a.json") == aux
        doc = aux.to_dict()
        assert set(doc["entries"][0]) == {"s", "a", "u", "p"}

    def test_json_errors(self, tmp_path):
        p = tmp_path / "a.json"
        p.write_text('{"kind": "u_given_sa"')
        with pytest.raises(LoadError, match="line"):
            load_aux(p)
        p.write_text(json.dumps({"kind": "nope", "u_vars": [], "entries": []}))
        with pytest.raises(LoadError, match="kind"):
            load_aux(p)
        p.write_text(json.dumps({"kind": "s_u_joint", "u_vars": ["U"], "entries": [{"s": "0", "p": 1}]}))
        with pytest.raises(LoadError, match="'u'"):
            load_aux(p)


class TestConsistentRange:
    def test_clipping(self):
        r = ConsistentRange(-0.1, 1.3, Strategy.NO_EXTERNAL)
        assert (r.clb, r.cub) == (0.0, 1.0)

    def test_inverted(self):
        with pytest.raises(BoundError):
            ConsistentRange(0.5, 0.2, Strategy.NO_EXTERNAL)

    def test_strategy_names(self):
        assert Strategy.parse("partial-u") is Strategy.PARTIAL_U
        assert Strategy.EXACT.collapses and not Strategy.NO_EXTERNAL.collapses
        with pytest.raises(ArgumentError):
            Strategy.parse("P7")


class TestNoExternal:
    def test_hand_example(self):
        d, p = four_cells()
        r = range_no_external(d, p, SP, ("U",))
        assert r.clb == 0 and r.cub == pytest.approx(0.5)

    def test_single_u_equals_gap(self):
        rows, p = cell_rows({(1, 0): (4, 3), (0, 0): (4, 1)})
        d = make_dataset(("S", "U", "Y"), rows)
        assert range_no_external(d, p, SP, ("U",)).cub == pytest.approx(0.5)
        assert range_no_external(d, p, SP, ()).cub == pytest.approx(empirical_fairness(d, p, SP).value)

    def test_both_orientations(self):
        # the biased gap favours s1 but the s0 extremes can flip it
        rows, p = cell_rows({(1, 0): (10, 6), (1, 1): (10, 4), (0, 0): (10, 9), (0, 1): (5, 0)})
        d = make_dataset(("S", "U", "Y"), rows)
        r = range_no_external(d, p, SP, ("U",))
        assert r.cub == pytest.approx(max(0.6 - 0.0, 0.9 - 0.4))

    def test_one_group_missing_in_a(self):
        rows = [(1, 0, 1), (0, 0, 1), (1, 0, 0)]
        d = make_dataset(("S", "U", "Y"), rows, admissible=("Y",))
        with pytest.raises(BoundError, match="lack one protected group"):
            range_no_external(d, np.array([1.0, 0.0, 1.0]), EO, ("U",))

    def test_argument_checks(self):
        d, p = four_cells()
        with pytest.raises(ArgumentError):
            range_no_external(d, p, SP, ("S",))
        with pytest.raises(ArgumentError):
            range_no_external(d, p[:-1], SP, ("U",))


class TestExact:
    def test_hand_example(self):
        d, p = four_cells()
        r = range_exact(d, p, SP, ("U",), halves())
        assert r.clb == r.cub == pytest.approx(0.30)

    def test_own_weights_identity(self):
        d, p = four_cells()
        own = estimate_aux(d.with_provenance("unknown"), AuxKind.U_GIVEN_SA, ("U",), SP)
        r = range_exact(d, p, SP, ("U",), own)
        assert r.cub == pytest.approx(empirical_fairness(d, p, SP).value, abs=1e-12)

    def test_missing_entry(self):
        d, p = four_cells()
        zeros = AuxStats(AuxKind.U_GIVEN_SA, ("U",), {(s, (), (u,)): float(u == "0") for s in "01" for u in "01"})
        assert range_exact(d, p, SP, ("U",), zeros).cub == pytest.approx(0.5)  # explicit zero mass is fine
        sparse = AuxStats(AuxKind.U_GIVEN_SA, ("U",), {("0", (), ("0",)): 1.0, ("1", (), ("0",)): 1.0})
        with pytest.raises(AuxCoverageError, match="u=\\['1'\\]"):
            range_exact(d, p, SP, ("U",), sparse)

    def test_wrong_kind(self):
        d, p = four_cells()
        with pytest.raises(AuxCoverageError):
            range_exact(d, p, SP, ("U",), AuxStats(AuxKind.SU_JOINT, ("U",), {("0", (), ("0",)): 1.0}))

    def test_absent_stratum_policy(self):
        rows, p = cell_rows({(1, 0): (4, 4), (0, 0): (4, 1), (0, 1): (4, 2)})
        d = make_dataset(("S", "U", "Y"), rows)
        r = range_exact(d, p, SP, ("U",), halves())
        assert r.diagnostics["absent_strata"] == 1
        assert r.diagnostics["absent_cells"][0]["s"] == "1"
        assert r.cub == pytest.approx(abs(0.5 * 1.0 - (0.5 * 0.25 + 0.5 * 0.5)))
        with pytest.raises(BoundError, match="strict"):
            range_exact(d, p, SP, ("U",), halves(), strict=True)

    def test_simulated_pipeline(self):
        est, target = exact_pipeline(seed=100, n=100_000)
        assert abs(est - target) < 0.02


class TestPartial:
    def test_reductions(self):
        d, p = four_cells()
        assert range_partial_u(d, p, SP, ("U",), (), None).cub == range_no_external(d, p, SP, ("U",)).cub
        up = halves(AuxKind.UPRIME_GIVEN_SA)
        assert range_partial_u(d, p, SP, ("U",), ("U",), up).cub == pytest.approx(
            range_exact(d, p, SP, ("U",), halves()).cub, abs=1e-12)

    def test_random_reductions(self):
        rng = np.random.default_rng(20)
        for _ in range(50):
            assert max(reduction_gaps(rng)) <= 1e-12

    def test_subset_required(self):
        d, p = four_cells()
        with pytest.raises(ArgumentError, match="subset"):
            range_partial_u(d, p, SP, (), ("U",), halves(AuxKind.UPRIME_GIVEN_SA))

    def test_between_exact_and_no_external(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            rows = rng.integers(0, 2, size=(60, 4))
            rows[:2, 0] = [0, 1]
            d = make_dataset(("S", "U1", "U2", "Y"), rows)
            preds = rng.random(60)
            own = estimate_aux(d.with_provenance("unknown"), AuxKind.U_GIVEN_SA, ("U1", "U2"), SP)
            ne = range_no_external(d, preds, SP, ("U1", "U2")).cub
            pu = range_partial_u(d, preds, SP, ("U1", "U2"), ("U1",), own.aligned((), ("U1",))).cub
            ex = range_exact(d, preds, SP, ("U1", "U2"), own).cub
            assert ex - 1e-12 <= pu <= ne + 1e-12


class TestMissingA:
    def test_identity_weights(self):
        rng = np.random.default_rng(22)
        rows = rng.integers(0, 2, size=(80, 3))
        d = make_dataset(("S", "U", "Y"), rows, admissible=("Y",))
        preds = rng.random(80)
        joint = estimate_aux(d.with_provenance("unknown"), AuxKind.SU_JOINT, ("U",), EO)
        r = range_missing_a(d, preds, EO, ("U",), joint)
        assert r.cub == pytest.approx(compute_range(d, preds, EO, StrategyChoice(Strategy.EQUALITY)).cub, abs=1e-12)
        assert r.clb == r.cub

    def test_precondition(self):
        g = DataCollectionDiagram(fig4_base(admissible={"Y"}), FIG4_PARENTS["G3"])
        d, _, _, _ = syn_split(0, 2000, "G3")
        aux = estimate_aux(d, AuxKind.SU_JOINT, ("X2",), EO)
        with pytest.raises(StrategyError, match="admissible"):
            range_missing_a(d, np.zeros(d.n_rows), EO, ("X2",), aux, diagram=g)

    def test_matches_exact_and_target_on_g2(self):
        train, test, biased, g = syn_split(7, 100_000, "G2")
        U = ("X2", "X4")
        ext = ExternalSample.from_dataset(train)
        joint = estimate_aux(ext, AuxKind.SU_JOINT, U, EO)
        cond = estimate_aux(ext, AuxKind.U_GIVEN_SA, U, EO)
        h = random_rule(np.random.default_rng(7), biased, ("X1", "X2", "X3", "X4"))
        ma = range_missing_a(biased, h(biased), EO, U, joint, diagram=g).cub
        ex = range_exact(biased, h(biased), EO, U, cond, diagram=g).cub
        target = empirical_fairness(test, h(test), EO).value
        assert abs(ma - ex) < 0.02
        assert abs(ma - target) < 0.02


class TestEquality:
    def test_collapses_to_biased(self):
        d, p = four_cells()
        r = range_equality(d, p, SP)
        assert r.clb == r.cub == pytest.approx(empirical_fairness(d, p, SP).value)

    def test_constant_predictor(self):
        d, _ = four_cells()
        assert range_equality(d, np.ones(d.n_rows), SP).cub == 0

    def test_selection_on_protected_only(self):
        train, test, biased, g = syn_split(3, 100_000, "R")
        from crafair.synth import apply_selection

        biased, g = apply_selection(train, SelectionSpec("custom", "S1", {(0,): 0.2, (1,): 0.9}, ("S",)), 4)
        h = random_rule(np.random.default_rng(3), biased, ("X1", "X2", "X3", "X4"))
        r = range_equality(biased, h(biased), EO, diagram=g)
        assert abs(r.cub - empirical_fairness(test, h(test), EO).value) < 0.02

    def test_precondition(self):
        d, _, _, g = syn_split(0, 2000, "G3")
        with pytest.raises(StrategyError):
            range_equality(d, np.zeros(d.n_rows), EO, diagram=g)


class TestStrategySelection:
    def g(self, name, adm=("Y",)):
        return DataCollectionDiagram(fig4_base(admissible=set(adm)), FIG4_PARENTS[name])

    def test_no_aux(self):
        assert select_strategy(self.g("G3"), (), EO).strategy is Strategy.NO_EXTERNAL

    def test_full_aux(self):
        g = self.g("G3")
        U = tuple(sorted(select_U(g)))
        aux = AuxStats(AuxKind.U_GIVEN_SA, U, {(s, (y,), (x,)): 0.5 for s in "01" for y in "01" for x in "01"}, ("Y",))
        c = select_strategy(g, [aux], EO)
        assert c.strategy is Strategy.EXACT and c.U == U

    def test_partial_aux(self):
        g = self.g("G3", adm=())
        assert set(select_U(g)) == {"X2", "X3", "X4"}
        aux = AuxStats(AuxKind.UPRIME_GIVEN_SA, ("X3",), {(s, (), (x,)): 0.5 for s in "01" for x in "01"})
        c = select_strategy(g, [aux], SP)
        assert c.strategy is Strategy.PARTIAL_U and c.U_prime == ("X3",)

    def test_missing_a(self):
        g = self.g("G2")
        joint = AuxStats(AuxKind.SU_JOINT, ("X2", "X4"),
                         {(s, (), (a, b)): 0.125 for s in "01" for a in "01" for b in "01"})
        c = select_strategy(g, [joint], EO)
        assert c.strategy is Strategy.MISSING_A and set(c.U) == {"X2", "X4"}

    def test_missing_a_blocked_when_selection_uses_a(self):
        g = self.g("G3")
        joint = AuxStats(AuxKind.SU_JOINT, ("X2",), {(s, (), (a,)): 0.25 for s in "01" for a in "01"})
        assert select_strategy(g, [joint], EO).strategy is Strategy.NO_EXTERNAL

    def test_equality(self):
        g = DataCollectionDiagram(fig4_base(admissible={"Y"}), {"S"})
        assert select_strategy(g, (), EO).strategy is Strategy.EQUALITY
        g = DataCollectionDiagram(fig4_base(admissible={"Y"}), set())
        assert select_strategy(g, (), EO).strategy is Strategy.EQUALITY

    def test_wrong_a_vars_ignored(self):
        g = self.g("G3")
        aux = AuxStats(AuxKind.U_GIVEN_SA, ("X2",), {(s, (), (x,)): 0.5 for s in "01" for x in "01"})
        assert select_strategy(g, [aux], EO).strategy is Strategy.NO_EXTERNAL

    def test_forced(self):
        g = self.g("G3")
        assert choose_strategy(g, (), EO, "no-external").strategy is Strategy.NO_EXTERNAL
        with pytest.raises(StrategyError):
            choose_strategy(g, (), EO, "exact")


class TestEstimateAux:
    def test_full_sample_frequencies(self):
        d, _ = four_cells()
        aux = estimate_aux(d.with_provenance("unbiased"), AuxKind.U_GIVEN_SA, ("U",), SP)
        assert aux.p("1", (), ("0",)) == pytest.approx(0.5)
        assert aux.p("0", (), ("1",)) == pytest.approx(2 / 12)
        joint = estimate_aux(d.with_provenance("unbiased"), AuxKind.SU_JOINT, ("U",), SP)
        assert joint.p("0", (), ("0",)) == pytest.approx(10 / 22)

    def test_zero_cells_kept(self):
        rows, _ = cell_rows({(1, 0): (3, 0), (0, 0): (2, 0), (0, 1): (2, 0)})
        d = make_dataset(("S", "U", "Y"), rows, provenance="unbiased")
        aux = estimate_aux(d, AuxKind.U_GIVEN_SA, ("U",), SP)
        assert aux.p("1", (), ("1",)) == 0.0

    def test_missing_column(self):
        d, _ = four_cells()
        ext = ExternalSample.from_dataset(d.with_provenance("unbiased"), columns=("S",))
        with pytest.raises(AuxCoverageError, match="U"):
            estimate_aux(ext, AuxKind.U_GIVEN_SA, ("U",), SP)

    def test_label_free_sample_for_parity(self):
        d, _ = four_cells()
        ext = ExternalSample.from_dataset(d.with_provenance("unbiased"), columns=("S", "U"))
        assert estimate_aux(ext, AuxKind.U_GIVEN_SA, ("U",), SP).u_vars == ("U",)

    def test_biased_sample_rejected(self):
        d, _ = four_cells()
        with pytest.raises(ArgumentError):
            ExternalSample(d)

    def test_half_samples_close(self):
        train, _, _, _ = syn_split(5, 50_000, "R")
        a = estimate_aux(train.take(np.arange(0, train.n_rows, 2)), AuxKind.U_GIVEN_SA, ("X2", "X4"), EO)
        b = estimate_aux(train.take(np.arange(1, train.n_rows, 2)), AuxKind.U_GIVEN_SA, ("X2", "X4"), EO)
        for ctx in a.contexts():
            tv = 0.5 * sum(abs(p - b.p(ctx[0], ctx[1], u)) for u, p in a.entries(*ctx))
            assert tv < 0.03


class TestProgram:
    def test_soft_equals_hard_on_binary(self):
        d, p = four_cells()
        prog = compile_bound(d, SP, StrategyChoice(Strategy.EXACT, ("U",), ("U",), halves()))
        assert prog.evaluate(p)[0] == range_exact(d, p, SP, ("U",), halves()).cub

    def test_permutation_invariant(self):
        rng = np.random.default_rng(23)
        rows = rng.integers(0, 2, size=(50, 3))
        rows[:2, 0] = [0, 1]
        d = make_dataset(("S", "U", "Y"), rows)
        p = rng.random(50)
        perm = rng.permutation(50)
        a = range_no_external(d, p, SP, ("U",))
        b = range_no_external(d.take(perm), p[perm], SP, ("U",))
        assert a.cub == b.cub

    def test_gradient_matches_finite_differences(self):
        from crafair.oracle import fd_gradient

        rng = np.random.default_rng(24)
        rows = rng.integers(0, 2, size=(40, 4))
        rows[:4, 0], rows[:4, 3] = [0, 1, 0, 1], [0, 0, 1, 1]
        d = make_dataset(("S", "U1", "U2", "Y"), rows, admissible=("Y",))
        own = estimate_aux(d.with_provenance("unknown"), AuxKind.U_GIVEN_SA, ("U1", "U2"), EO)
        for choice in (StrategyChoice(Strategy.NO_EXTERNAL, ("U1", "U2")),
                       StrategyChoice(Strategy.PARTIAL_U, ("U1", "U2"), ("U1",), own.aligned(("Y",), ("U1",))),
                       StrategyChoice(Strategy.EXACT, ("U1", "U2"), ("U1", "U2"), own)):
            prog = compile_bound(d, EO, choice)
            p = rng.uniform(0.1, 0.9, 40)
            _, _, g = prog.evaluate(p, want_grad=True)
            num = fd_gradient(lambda q: prog.evaluate(q)[0], p, eps=1e-7)
            np.testing.assert_allclose(g, num, atol=1e-6)

    def test_extra_protected_value(self):
        from crafair.data import Column, Dataset, Schema

        schema = Schema((Column("S", ("0", "1", "2")), Column("Y", ("0", "1"))), "Y", "S", "0", "1")
        d = Dataset(schema, np.array([[0, 0], [1, 1], [2, 1]]))
        with pytest.raises(BoundError):
            range_no_external(d, np.ones(3), SP, ())


@pytest.mark.parametrize("strategy", list(OStrategy))
def test_containment_sample(strategy):
    rng = np.random.default_rng(hash(strategy.value) % 2 ** 32)
    for _ in range(25):
        ok, oi, r = check_containment(random_instance(rng, strategy, k=3, n_rows=8))
        assert ok, (oi, r)
