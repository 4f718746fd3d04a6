import dataclasses

import numpy as np
import pytest

from crafair.causal_graph import CausalDiagram
from crafair.cra import Strategy, compute_range
from crafair.errors import ArgumentError, OracleScopeError
from crafair.fairness import empirical_fairness
from crafair.oracle import (
    check_containment,
    enumerate_repairs,
    fd_gradient,
    oracle_dsep,
    oracle_markov_boundary,
    random_instance,
)

from .helpers import fig3_base, fig4_base


class TestGraphOracles:
    def test_fig3a(self):
        assert oracle_dsep(fig3_base(), "Race", "Y", set())

    def test_chain(self):
        g = CausalDiagram({"A", "B", "Y", "S"}, {("A", "B"), ("B", "Y")}, "Y", "S")
        assert oracle_dsep(g, "A", "Y", {"B"})
        assert not oracle_dsep(g, "A", "Y", set())

    def test_markov_boundary(self):
        assert oracle_markov_boundary(fig4_base(), "Y") == {"X3", "X4"}

    def test_scope(self):
        nodes = {f"N{i}" for i in range(9)}
        g = CausalDiagram(nodes, set(), "N0", "N1")
        with pytest.raises(OracleScopeError):
            oracle_dsep(g, "N2", "N3")
        with pytest.raises(OracleScopeError):
            oracle_markov_boundary(g, "N0")

    def test_argument_checks(self):
        with pytest.raises(ArgumentError):
            oracle_dsep(fig3_base(), "Y", "Y")


class TestFiniteDifferences:
    def test_quadratic(self):
        x = np.array([0.3, -1.2, 2.0])
        g = fd_gradient(lambda v: float(v @ v + 3 * v[0] * v[1]), x)
        np.testing.assert_allclose(g, [2 * 0.3 + 3 * -1.2, 2 * -1.2 + 3 * 0.3, 4.0], atol=1e-8)

    def test_constant(self):
        assert not fd_gradient(lambda v: 7.0, np.ones(4)).any()

    def test_non_finite(self):
        with pytest.raises(OracleScopeError):
            fd_gradient(lambda v: float("nan"), np.ones(2))


class TestRepairs:
    @pytest.mark.parametrize("strategy", list(Strategy))
    def test_k_zero_is_biased_fairness(self, strategy):
        u = random_instance(np.random.default_rng(1), strategy, k=0)
        oi = enumerate_repairs(u)
        f = empirical_fairness(u.biased, u.h(u.biased), u.spec).value
        assert oi.survivors == 1 and oi.low == pytest.approx(f) and oi.high == pytest.approx(f)

    def test_deterministic(self):
        a = enumerate_repairs(random_instance(np.random.default_rng(2), Strategy.NO_EXTERNAL, k=3))
        b = enumerate_repairs(random_instance(np.random.default_rng(2), Strategy.NO_EXTERNAL, k=3))
        assert a == b

    @pytest.mark.parametrize("strategy", [Strategy.EXACT, Strategy.PARTIAL_U, Strategy.MISSING_A])
    def test_looser_tolerance_widens(self, strategy):
        rng = np.random.default_rng(3)
        for _ in range(10):
            u = random_instance(rng, strategy, k=3, n_rows=8)
            tight = enumerate_repairs(u)
            loose = enumerate_repairs(u, aux_tol=0.1, ci_tol=0.1)
            assert loose.survivors >= tight.survivors
            assert loose.low <= tight.low + 1e-12 and loose.high >= tight.high - 1e-12

    def test_k_bound(self):
        u = random_instance(np.random.default_rng(4), Strategy.EQUALITY, k=1)
        with pytest.raises(ArgumentError):
            dataclasses.replace(u, k=7)

    def test_all_strategies_contained(self):
        rng = np.random.default_rng(5)
        for strategy in Strategy:
            for _ in range(20):
                ok, oi, r = check_containment(random_instance(rng, strategy))
                assert ok, (strategy, oi, r)

    def test_collapsing_strategies_hit_the_point(self):
        # with exact constraints the hidden repair survives and every survivor has the exact value
        rng = np.random.default_rng(6)
        for strategy in (Strategy.EQUALITY, Strategy.EXACT):
            for _ in range(10):
                u = random_instance(rng, strategy)
                oi = enumerate_repairs(u)
                r = compute_range(u.biased, u.h(u.biased), u.spec, u.choice)
                assert oi.low == pytest.approx(r.cub, abs=1e-9) and oi.high == pytest.approx(r.cub, abs=1e-9)
