"""Consistent ranges of the fairness query on the target population.

Every strategy is compiled into a :class:`BoundProgram`: per admissible value
``a`` and protected group ``s`` a list of weighted groups of ``(s, a, u)``
cells.  The term for ``a`` is

    max over (hi, lo) of  sum_g w_g * max_{c in g} rate(c)   [side hi]
                        - sum_g w_g * min_{c in g} rate(c)   [side lo]

With singleton groups this is the absolute difference of two reweighted
rates (an exact value); with one group holding every cell it is the
no-external-data bound; grouping by a subset ``U'`` of ``U`` gives the
partial bound in between.  The same program evaluated on probabilities is
the soft bound used for training, with a subgradient through the active
cells.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .causal_graph import (
    DataCollectionDiagram,
    d_separated_sets,
    features_independent_of_selection,
    select_U,
)
from .data import Dataset, stratify
from .errors import ArgumentError, AuxCoverageError, BoundError, LoadError, StrategyError
from .fairness import FairnessSpec, SkippedStrataWarning

__all__ = [
    "AuxKind",
    "AuxStats",
    "Strategy",
    "StrategyChoice",
    "ConsistentRange",
    "ExternalSample",
    "BoundProgram",
    "select_strategy",
    "choose_strategy",
    "compile_bound",
    "compute_range",
    "range_equality",
    "range_no_external",
    "range_exact",
    "range_partial_u",
    "range_missing_a",
    "estimate_aux",
    "load_aux",
    "save_aux",
]

PROB_TOL = 1e-9
NORM_TOL = 1e-6
MAX_ENUMERATED_CELLS = 1_000_000


class AuxKind(str, Enum):
    U_GIVEN_SA = "u_given_sa"
    UPRIME_GIVEN_SA = "uprime_given_sa"
    SU_JOINT = "s_u_joint"

    @property
    def conditional(self) -> bool:
        return self is not AuxKind.SU_JOINT


class Strategy(str, Enum):
    EQUALITY = "equality"
    NO_EXTERNAL = "no_external"
    EXACT = "exact"
    PARTIAL_U = "partial_u"
    MISSING_A = "missing_a"

    @property
    def collapses(self) -> bool:
        """Strategies whose range is a single point."""
        return self in (Strategy.EQUALITY, Strategy.EXACT, Strategy.MISSING_A)

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        key = str(name).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ArgumentError(f"unknown strategy {name!r}; choose from {[s.value for s in cls]}") from None


# -- auxiliary statistics --

@dataclass(frozen=True)
class AuxStats:
    """Target-population probability table.

    ``table`` maps ``(s, a, u)`` label tuples to probabilities, with ``a``
    ordered by ``a_vars`` and ``u`` by ``u_vars``.  Joint tables use ``a = ()``.
    """

    kind: AuxKind
    u_vars: tuple
    table: Mapping
    a_vars: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", AuxKind(self.kind))
        object.__setattr__(self, "u_vars", tuple(self.u_vars))
        object.__setattr__(self, "a_vars", tuple(self.a_vars) if self.kind.conditional else ())
        clean = {}
        for key, p in self.table.items():
            s, a, u = key
            key = (str(s), tuple(str(v) for v in a), tuple(str(v) for v in u))
            if len(key[1]) != len(self.a_vars) or len(key[2]) != len(self.u_vars):
                raise ArgumentError(f"aux key {key} does not match a_vars={self.a_vars}, u_vars={self.u_vars}")
            p = float(p)
            if not (-PROB_TOL <= p <= 1 + PROB_TOL):
                raise ArgumentError(f"aux probability {p} for {key} is outside [0, 1]")
            if key in clean:
                raise ArgumentError(f"duplicate aux entry {key}")
            clean[key] = min(max(p, 0.0), 1.0)
        object.__setattr__(self, "table", dict(sorted(clean.items())))
        if self.kind.conditional:
            totals = {}
            for (s, a, _), p in self.table.items():
                totals[(s, a)] = totals.get((s, a), 0.0) + p
            for ctx, tot in totals.items():
                if abs(tot - 1.0) > NORM_TOL:
                    raise ArgumentError(f"aux probabilities for context {ctx} sum to {tot}, not 1")
        elif self.table:
            tot = sum(self.table.values())
            if abs(tot - 1.0) > NORM_TOL:
                raise ArgumentError(f"joint aux probabilities sum to {tot}, not 1")

    def p(self, s, a=(), u=()):
        return self.table.get((str(s), tuple(a), tuple(u)))

    def contexts(self) -> list:
        return sorted({(s, a) for s, a, _ in self.table})

    def entries(self, s, a=()):
        """``(u, p)`` pairs of one conditioning context in sorted order."""
        return [(u, p) for (ss, aa, u), p in self.table.items() if ss == s and aa == tuple(a)]

    def aligned(self, a_vars: Sequence[str], u_vars: Sequence[str]) -> "AuxStats":
        """Marginalise onto ``u_vars`` and reorder keys to the requested variable order."""
        a_vars, u_vars = tuple(a_vars), tuple(u_vars)
        if self.kind.conditional and set(a_vars) != set(self.a_vars):
            raise AuxCoverageError(f"aux is conditioned on {list(self.a_vars)}, need {list(a_vars)}")
        missing = set(u_vars) - set(self.u_vars)
        if missing:
            raise AuxCoverageError(f"aux does not cover {sorted(missing)}")
        a_pos = [self.a_vars.index(v) for v in a_vars] if self.kind.conditional else []
        u_pos = [self.u_vars.index(v) for v in u_vars]
        out = {}
        for (s, a, u), p in self.table.items():
            key = (s, tuple(a[i] for i in a_pos), tuple(u[i] for i in u_pos))
            out[key] = out.get(key, 0.0) + p
        kind = self.kind
        if kind is AuxKind.U_GIVEN_SA and set(u_vars) != set(self.u_vars):
            kind = AuxKind.UPRIME_GIVEN_SA
        return AuxStats(kind, u_vars, out, a_vars if self.kind.conditional else ())

    def to_dict(self) -> dict:
        entries = []
        for (s, a, u), p in self.table.items():
            e = {"s": s}
            if self.kind.conditional:
                e["a"] = dict(zip(self.a_vars, a))
            e["u"] = dict(zip(self.u_vars, u))
            e["p"] = p
            entries.append(e)
        out = {"kind": self.kind.value, "u_vars": list(self.u_vars)}
        if self.kind.conditional:
            out["a_vars"] = list(self.a_vars)
        out["entries"] = entries
        return out

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AuxStats":
        try:
            kind = AuxKind(doc["kind"])
            u_vars = tuple(doc["u_vars"])
            entries = doc["entries"]
        except KeyError as exc:
            raise LoadError(f"aux document is missing key {exc.args[0]!r}") from None
        except ValueError:
            raise LoadError(f"unknown aux kind {doc.get('kind')!r}") from None
        if kind.conditional:
            a_vars = doc.get("a_vars")
            if a_vars is None:
                a_vars = sorted(entries[0].get("a", {})) if entries else []
            a_vars = tuple(a_vars)
        else:
            a_vars = ()
        table = {}
        for i, e in enumerate(entries):
            try:
                a = e.get("a", {})
                key = (str(e["s"]), tuple(str(a[v]) for v in a_vars), tuple(str(e["u"][v]) for v in u_vars))
                if key in table:
                    raise LoadError(f"duplicate aux entry {key}", row=i)
                table[key] = e["p"]
            except KeyError as exc:
                raise LoadError(f"aux entry lacks {exc.args[0]!r}", row=i) from None
        try:
            return cls(kind, u_vars, table, a_vars)
        except ArgumentError as exc:
            raise LoadError(str(exc)) from None


def load_aux(path) -> AuxStats:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})", path=path) from None
    except OSError as exc:
        raise LoadError(str(exc), path=path) from None
    try:
        return AuxStats.from_dict(doc)
    except LoadError as exc:
        raise LoadError(str(exc), path=path) from None


def save_aux(aux: AuxStats, path) -> None:
    Path(path).write_text(json.dumps(aux.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class ExternalSample:
    """Unbiased rows, possibly label-free or restricted to some columns."""

    data: Dataset

    def __post_init__(self):
        if self.data.provenance == "biased":
            raise ArgumentError("an external sample must not be selection-biased")

    @classmethod
    def from_dataset(cls, d: Dataset, columns: Optional[Iterable[str]] = None, rate: float = 1.0,
                     seed: int = 0) -> "ExternalSample":
        if not 0 < rate <= 1:
            raise ArgumentError("rate must lie in (0, 1]")
        if rate < 1:
            rng = np.random.default_rng(seed)
            k = max(1, int(round(rate * d.n_rows)))
            d = d.take(np.sort(rng.choice(d.n_rows, size=k, replace=False)))
        if columns is not None:
            d = d.project(columns)
        return cls(d.with_provenance("unbiased"))


def estimate_aux(sample, kind, u_vars: Sequence[str], spec: FairnessSpec) -> AuxStats:
    """Frequency tables from an unbiased sample, zero-count cells kept with p = 0."""
    d = sample.data if isinstance(sample, ExternalSample) else sample
    kind = AuxKind(kind)
    u_vars = tuple(u_vars)
    a_vars = spec.admissible if kind.conditional else ()
    need = (spec.protected, *a_vars, *u_vars)
    missing = [v for v in need if not d.schema.has(v)]
    if missing:
        raise AuxCoverageError(f"external sample lacks columns {missing}")
    s_col = d.schema.column(spec.protected)
    keep = np.isin(d.col(spec.protected), [s_col.code_of(spec.s0), s_col.code_of(spec.s1)])
    if not keep.any():
        raise AuxCoverageError("external sample contains neither protected group")
    codes = d.codes[keep][:, [d.schema.index(v) for v in need]]
    doms = [d.schema.column(v).domain for v in need]
    counts = {}
    for row in map(tuple, codes.tolist()):
        counts[row] = counts.get(row, 0) + 1
    na = len(a_vars)
    u_doms = doms[1 + na:]
    n_u = int(np.prod([len(x) for x in u_doms])) if u_doms else 1
    full = n_u <= MAX_ENUMERATED_CELLS
    table = {}
    if kind.conditional:
        ctx_tot = {}
        for row, c in counts.items():
            ctx_tot[row[:1 + na]] = ctx_tot.get(row[:1 + na], 0) + c
        for ctx, tot in ctx_tot.items():
            us = itertools.product(*[range(len(x)) for x in u_doms]) if full else \
                sorted({r[1 + na:] for r in counts if r[:1 + na] == ctx})
            for u in us:
                c = counts.get(ctx + tuple(u), 0)
                key = (doms[0][ctx[0]], tuple(doms[1 + j][v] for j, v in enumerate(ctx[1:])),
                       tuple(u_doms[j][v] for j, v in enumerate(u)))
                table[key] = c / tot
    else:
        tot = int(keep.sum())
        s_codes = sorted({s_col.code_of(spec.s0), s_col.code_of(spec.s1)})
        if full:
            cells = [(s, *u) for s in s_codes for u in itertools.product(*[range(len(x)) for x in u_doms])]
        else:
            cells = sorted(counts)
        for row in cells:
            key = (doms[0][row[0]], (), tuple(u_doms[j][v] for j, v in enumerate(row[1:])))
            table[key] = counts.get(tuple(row), 0) / tot
    return AuxStats(kind, u_vars, table, a_vars)


# -- ranges --

@dataclass(frozen=True)
class ConsistentRange:
    clb: float
    cub: float
    strategy: Strategy
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        clb = min(max(float(self.clb), 0.0), 1.0)
        cub = min(max(float(self.cub), 0.0), 1.0)
        if clb > cub + PROB_TOL:
            raise BoundError(f"inconsistent range [{clb}, {cub}]")
        object.__setattr__(self, "clb", min(clb, cub))
        object.__setattr__(self, "cub", cub)

    def contains(self, value: float, tol: float = PROB_TOL) -> bool:
        return self.clb - tol <= value <= self.cub + tol

    def to_dict(self) -> dict:
        return {"clb": self.clb, "cub": self.cub, "strategy": self.strategy.value,
                "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class StrategyChoice:
    strategy: Strategy
    U: tuple = ()
    U_prime: tuple = ()
    aux: Optional[AuxStats] = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {"strategy": self.strategy.value, "U": list(self.U), "U_prime": list(self.U_prime),
                "aux_kind": self.aux.kind.value if self.aux is not None else None, "reason": self.reason}


@dataclass
class _Term:
    a: tuple
    sides: dict  # {"s1": [(w, cells)], "s0": [...]}


@dataclass
class BoundProgram:
    """Compiled bound: evaluate on any per-row prediction vector."""

    strategy: Strategy
    row_cell: np.ndarray
    n: np.ndarray
    keys: tuple
    terms: list
    U: tuple
    U_prime: tuple
    diagnostics: dict

    def evaluate(self, values, want_grad: bool = False):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape[0] != self.row_cell.shape[0]:
            raise ArgumentError(f"got {values.shape[0]} predictions for {self.row_cell.shape[0]} rows")
        mass = np.bincount(self.row_cell, weights=values, minlength=len(self.n))
        rate = mass / np.maximum(self.n, 1)
        coef = np.zeros(len(self.n)) if want_grad else None
        k = len(self.terms)
        total = 0.0
        per_a = []
        for term in self.terms:
            best = None
            for hi, lo in (("s1", "s0"), ("s0", "s1")):
                up, up_cells = _side(term.sides[hi], rate, np.argmax)
                dn, dn_cells = _side(term.sides[lo], rate, np.argmin)
                val = up - dn
                if best is None or val > best[0]:
                    best = (val, hi, up_cells, dn_cells)
            val, hi, up_cells, dn_cells = best
            total += val
            per_a.append({"a": list(term.a), "term": float(val), "larger": hi})
            if want_grad:
                for c, w in up_cells:
                    coef[c] += w / k
                for c, w in dn_cells:
                    coef[c] -= w / k
        value = total / k
        clipped = value > 1.0
        value = float(min(max(value, 0.0), 1.0))
        if not want_grad:
            return value, per_a
        if clipped:
            coef[:] = 0.0
        grad = (coef / np.maximum(self.n, 1))[self.row_cell]
        return value, per_a, grad

    def range(self, values) -> ConsistentRange:
        value, per_a = self.evaluate(values)
        diag = dict(self.diagnostics)
        diag["per_a"] = per_a
        clb = value if self.strategy.collapses else 0.0
        return ConsistentRange(clb, value, self.strategy, diag)


def _side(groups, rate, pick):
    total = 0.0
    active = []
    for w, cells in groups:
        r = rate[cells]
        j = int(pick(r))  # first extreme in sorted key order
        total += w * r[j]
        active.append((int(cells[j]), w))
    return total, active


def _stratum_cells(d: Dataset, spec: FairnessSpec, U: Sequence[str]):
    t = stratify(d, np.zeros(d.n_rows), tuple(U), spec.admissible)
    by = {}
    for i, (s, a, u) in enumerate(t.keys):
        by.setdefault(a, {}).setdefault(s, {})[u] = i
    return t, by


def _check_protected(d: Dataset, spec: FairnessSpec):
    col = d.schema.column(spec.protected)
    ok = {col.code_of(spec.s0), col.code_of(spec.s1)}
    bad = sorted({col.domain[c] for c in np.unique(d.col(spec.protected))} - {col.domain[c] for c in ok})
    if bad:
        raise BoundError(f"protected attribute has values {bad} besides {spec.s0!r}/{spec.s1!r}")


def _a_with_both(t, by, spec, strategy):
    usable, lacking = [], []
    for a in t.a_values():
        groups = by.get(a, {})
        if spec.s1 in groups and spec.s0 in groups:
            usable.append(a)
        else:
            lacking.append(a)
    if lacking and strategy is not Strategy.EQUALITY:
        raise BoundError(f"admissible strata {[list(a) for a in lacking]} lack one protected group "
                         "in the biased data; no consistent bound exists for them")
    if lacking:
        warnings.warn(f"skipped admissible strata lacking a group: {[list(a) for a in lacking]}",
                      SkippedStrataWarning, stacklevel=4)
    if not usable:
        raise BoundError("no admissible stratum contains both protected groups")
    return usable, lacking


class _Absent:
    """Collects target-mass strata that were never observed in the biased data."""

    def __init__(self, strict: bool):
        self.strict = strict
        self.cells = []

    def add(self, s, a, u, p):
        if self.strict:
            raise BoundError(f"stratum s={s!r}, a={list(a)}, u={list(u)} has target mass {p:g} "
                             "but no biased-data rows (strict mode)")
        self.cells.append({"s": s, "a": list(a), "u": list(u), "p": p})


def compile_bound(d: Dataset, spec: FairnessSpec, choice: StrategyChoice, *, strict: bool = False) -> BoundProgram:
    """Turn a strategy choice into a reusable :class:`BoundProgram` over ``d``'s rows."""
    _check_protected(d, spec)
    strategy = choice.strategy
    U = tuple(choice.U) if strategy is not Strategy.EQUALITY else ()
    Up = tuple(choice.U_prime)
    if strategy is Strategy.EXACT:
        Up = U
    if strategy is Strategy.NO_EXTERNAL:
        Up = ()
    if set(Up) - set(U):
        raise ArgumentError(f"U' = {list(Up)} is not a subset of U = {list(U)}")
    if set(U) & ({spec.protected} | set(spec.admissible)):
        raise ArgumentError("U must not contain the protected or admissible attributes")

    t, by = _stratum_cells(d, spec, U)
    usable, lacking = _a_with_both(t, by, spec, strategy)
    absent = _Absent(strict)
    terms = []

    if strategy is Strategy.MISSING_A:
        aux = _need_aux(choice, (AuxKind.SU_JOINT,), spec, U)
        su_n = {}
        for (s, a, u), i in zip(t.keys, range(len(t.keys))):
            su_n[(s, u)] = su_n.get((s, u), 0) + int(t.n[i])
        for s, u in su_n:
            if aux.p(s, (), u) is None:
                raise AuxCoverageError(f"aux lacks Pr(s={s!r}, u={list(u)}) although the biased data has rows there")
        for s, _, u in aux.table:
            p = aux.p(s, (), u)
            if p > PROB_TOL and (s, u) not in su_n and s in (spec.s0, spec.s1):
                absent.add(s, (), u, p)
        for a in usable:
            sides = {}
            for s in ("s1", "s0"):
                label = getattr(spec, s)
                cells = by[a][label]
                raw = {u: (t.n[i] / su_n[(label, u)]) * aux.p(label, (), u) for u, i in cells.items()}
                den = sum(raw[u] for u in sorted(raw))
                if den <= PROB_TOL:
                    raise BoundError(f"zero weight normaliser for s={label!r}, a={list(a)}")
                sides[s] = [(raw[u] / den, np.array([cells[u]])) for u in sorted(cells)]
            terms.append(_Term(a, sides))
    elif strategy is Strategy.EQUALITY:
        for a in usable:
            terms.append(_Term(a, {s: [(1.0, np.array([by[a][getattr(spec, s)][()]]))] for s in ("s1", "s0")}))
    else:
        if Up:
            aux = _need_aux(choice, (AuxKind.U_GIVEN_SA, AuxKind.UPRIME_GIVEN_SA), spec, Up)
        else:
            aux = None
        pos = [U.index(v) for v in Up]
        for a in usable:
            sides = {}
            for s in ("s1", "s0"):
                label = getattr(spec, s)
                groups = {}
                for u, i in sorted(by[a][label].items()):
                    groups.setdefault(tuple(u[j] for j in pos), []).append(i)
                sides[s] = _weigh_groups(groups, aux, label, a, absent)
            terms.append(_Term(a, sides))

    diagnostics = {
        "U": list(U),
        "U_prime": list(Up) if strategy in (Strategy.PARTIAL_U, Strategy.EXACT) else [],
        "absent_strata": len(absent.cells),
        "absent_cells": absent.cells,
        "skipped_a": [list(a) for a in lacking],
    }
    return BoundProgram(strategy, t.row_cell, t.n.astype(float), t.keys, terms, U, Up, diagnostics)


def _weigh_groups(groups, aux, s, a, absent):
    if aux is None:
        return [(1.0, np.array(cells)) for _, cells in sorted(groups.items())]
    out = []
    for up, cells in sorted(groups.items()):
        p = aux.p(s, a, up)
        if p is None:
            raise AuxCoverageError(f"aux lacks an entry for s={s!r}, a={list(a)}, u={list(up)} "
                                   "although the biased data has rows there")
        if p > PROB_TOL:
            out.append((p, np.array(cells)))
    for up, p in aux.entries(s, a):
        if p > PROB_TOL and up not in groups:
            absent.add(s, a, up, p)
    if not out:
        raise BoundError(f"aux puts no mass on observed strata for s={s!r}, a={list(a)}")
    return out


def _need_aux(choice, kinds, spec, vars_) -> AuxStats:
    aux = choice.aux
    if aux is None:
        raise AuxCoverageError(f"strategy {choice.strategy.value} needs auxiliary statistics")
    if aux.kind not in kinds:
        raise AuxCoverageError(f"strategy {choice.strategy.value} needs aux of kind "
                               f"{[k.value for k in kinds]}, got {aux.kind.value}")
    return aux.aligned(spec.admissible, vars_)


# -- preconditions and strategy selection --

def _roles(g: DataCollectionDiagram, spec: FairnessSpec) -> DataCollectionDiagram:
    if g.protected != spec.protected or set(g.admissible) != set(spec.admissible):
        return g.with_roles(protected=spec.protected, admissible=spec.admissible)
    return g


def _independent_missing_a(g: DataCollectionDiagram, U) -> bool:
    given = {g.protected} | set(U)
    left = (set(g.features) | set(g.admissible)) - given
    return d_separated_sets(g, left, {g.selection}, given)


def _verify(g, spec, strategy, U=()):
    if g is None:
        return
    g = _roles(g, spec)
    if strategy is Strategy.EQUALITY:
        if not features_independent_of_selection(g, ()):
            raise StrategyError("features are not independent of selection given the protected "
                                "and admissible attributes; the biased-data fairness is not exact")
    elif strategy is Strategy.MISSING_A:
        if set(g.admissible) & set(g.selection_parents):
            raise StrategyError("selection depends directly on an admissible attribute")
        if not _independent_missing_a(g, U):
            raise StrategyError(f"features and admissible attributes are not independent of selection given S and U={sorted(U)}")
    elif not features_independent_of_selection(g, U):
        raise StrategyError(f"U = {sorted(U)} does not separate the features from the selection node")


def select_strategy(g: DataCollectionDiagram, aux: Iterable[AuxStats] = (), spec: Optional[FairnessSpec] = None) -> StrategyChoice:
    """Pick the tightest applicable strategy for the diagram and the available aux tables."""
    if spec is not None:
        g = _roles(g, spec)
    aux = list(aux)
    if features_independent_of_selection(g, ()):
        return StrategyChoice(Strategy.EQUALITY, reason="features independent of selection given S and A")
    A = set(g.admissible)
    conditional = [x for x in aux if x.kind.conditional and set(x.a_vars) == A]
    joint = [x for x in aux if not x.kind.conditional]
    available = set().union(*[x.u_vars for x in aux]) if aux else None
    U = tuple(sorted(select_U(g, available)))

    for x in conditional:
        if set(U) <= set(x.u_vars):
            return StrategyChoice(Strategy.EXACT, U, U, x.aligned(tuple(g.admissible), U),
                                  reason="aux covers the full stratification set")
    best = None
    for x in conditional:
        up = tuple(v for v in U if v in x.u_vars)
        if up and (best is None or len(up) > len(best[0])):
            best = (up, x)
    if best is not None:
        up, x = best
        return StrategyChoice(Strategy.PARTIAL_U, U, up, x.aligned(tuple(g.admissible), up),
                              reason="aux covers part of the stratification set")

    if joint and not (A & set(g.selection_parents)):
        candidates = []
        if not (set(U) & A) and _independent_missing_a(g, U):
            candidates.append(U)
        fallback = tuple(sorted(g.selection_parents - {g.protected}))
        if _independent_missing_a(g, fallback):
            candidates.append(fallback)
        for Um in candidates:
            for x in joint:
                if set(Um) <= set(x.u_vars):
                    return StrategyChoice(Strategy.MISSING_A, Um, (), x.aligned((), Um),
                                          reason="selection ignores the admissible attributes and Pr(s, u) is available")
    return StrategyChoice(Strategy.NO_EXTERNAL, U, reason="no usable auxiliary statistics")


def compute_range(d: Dataset, preds, spec: FairnessSpec, choice: StrategyChoice, *,
                  diagram: Optional[DataCollectionDiagram] = None, strict: bool = False) -> ConsistentRange:
    _verify(diagram, spec, choice.strategy, choice.U)
    return compile_bound(d, spec, choice, strict=strict).range(preds)


def range_equality(d_biased, preds, spec, *, diagram=None) -> ConsistentRange:
    """Biased-data fairness, exact when features are independent of selection given S and A."""
    return compute_range(d_biased, preds, spec, StrategyChoice(Strategy.EQUALITY), diagram=diagram)


def range_no_external(d_biased, preds, spec, U, *, diagram=None, strict=False) -> ConsistentRange:
    """Upper bound from the biased data alone: extreme stratum rates per group."""
    return compute_range(d_biased, preds, spec, StrategyChoice(Strategy.NO_EXTERNAL, tuple(U)),
                         diagram=diagram, strict=strict)


def range_exact(d_biased, preds, spec, U, aux, *, diagram=None, strict=False) -> ConsistentRange:
    """Target fairness from stratum rates reweighted by Pr(u | s, a)."""
    return compute_range(d_biased, preds, spec, StrategyChoice(Strategy.EXACT, tuple(U), tuple(U), aux),
                         diagram=diagram, strict=strict)


def range_partial_u(d_biased, preds, spec, U, U_prime, aux, *, diagram=None, strict=False) -> ConsistentRange:
    """Upper bound using Pr(u' | s, a) for a subset ``U_prime`` of ``U``."""
    U, U_prime = tuple(U), tuple(U_prime)
    return compute_range(d_biased, preds, spec, StrategyChoice(Strategy.PARTIAL_U, U, U_prime, aux),
                         diagram=diagram, strict=strict)


def range_missing_a(d_biased, preds, spec, U, aux, *, diagram=None, strict=False) -> ConsistentRange:
    """Target fairness from Pr(s, u) when selection does not depend on the admissible attributes."""
    return compute_range(d_biased, preds, spec, StrategyChoice(Strategy.MISSING_A, tuple(U), (), aux),
                         diagram=diagram, strict=strict)


def choose_strategy(g: DataCollectionDiagram, aux: Iterable[AuxStats], spec: FairnessSpec,
                    strategy) -> StrategyChoice:
    """Build a choice for an explicitly requested strategy, using whatever aux fits it."""
    strategy = Strategy.parse(strategy) if not isinstance(strategy, Strategy) else strategy
    g = _roles(g, spec)
    aux = list(aux)
    auto = select_strategy(g, aux, spec)
    if auto.strategy is strategy:
        return auto
    A = set(g.admissible)
    available = set().union(*[x.u_vars for x in aux]) if aux else None
    U = tuple(sorted(select_U(g, available)))
    conditional = [x for x in aux if x.kind.conditional and set(x.a_vars) == A]
    if strategy is Strategy.EQUALITY:
        return StrategyChoice(Strategy.EQUALITY, reason="requested")
    if strategy is Strategy.NO_EXTERNAL:
        return StrategyChoice(Strategy.NO_EXTERNAL, U, reason="requested")
    if strategy is Strategy.EXACT:
        for x in conditional:
            if set(U) <= set(x.u_vars):
                return StrategyChoice(Strategy.EXACT, U, U, x.aligned(tuple(g.admissible), U), reason="requested")
        raise StrategyError(f"exact computation needs Pr(u | s, a) for U = {list(U)}")
    if strategy is Strategy.PARTIAL_U:
        for x in sorted(conditional, key=lambda x: -len(set(x.u_vars) & set(U))):
            up = tuple(v for v in U if v in x.u_vars)
            return StrategyChoice(Strategy.PARTIAL_U, U, up, x.aligned(tuple(g.admissible), up) if up else None,
                                  reason="requested")
        return StrategyChoice(Strategy.PARTIAL_U, U, (), None, reason="requested without aux")
    joint = [x for x in aux if not x.kind.conditional]
    Um = tuple(sorted(g.selection_parents - {g.protected}))
    for cand in (U, Um):
        for x in joint:
            if set(cand) <= set(x.u_vars):
                return StrategyChoice(Strategy.MISSING_A, cand, (), x.aligned((), cand), reason="requested")
    raise StrategyError("the missing-admissible strategy needs Pr(s, u) covering the selection parents")
