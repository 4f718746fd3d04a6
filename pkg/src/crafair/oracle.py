"""Brute-force reference implementations used to check the fast code paths.

* :func:`oracle_dsep` enumerates every simple undirected path.
* :func:`oracle_markov_boundary` searches subsets by increasing size.
* :func:`enumerate_repairs` lists every superset of a tiny biased dataset
  (up to ``k`` added rows) consistent with conditional-independence and
  auxiliary-table constraints and reports the extreme fairness values.
* :func:`fd_gradient` is a central finite-difference gradient.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Optional

import numpy as np

from .cra import AuxKind, AuxStats, Strategy, StrategyChoice, compute_range
from .data import Column, Dataset, Schema
from .errors import ArgumentError, OracleScopeError
from .fairness import FairnessSpec

__all__ = [
    "oracle_dsep",
    "oracle_markov_boundary",
    "fd_gradient",
    "CIConstraint",
    "TinyUniverse",
    "OracleInterval",
    "enumerate_repairs",
    "random_instance",
    "check_containment",
    "H",
    "MAX_ORACLE_NODES",
    "MAX_COMPLETIONS",
]

MAX_ORACLE_NODES = 8
MAX_COMPLETIONS = 10 ** 7
MAX_ADDED_ROWS = 6
H = "__h__"  # stands for the classifier output in constraint specifications


# -- graphs --

def _neighbours(g, n):
    return set(g.parents(n)) | set(g.children(n))


def _descendants(g, n):
    out, stack = set(), [n]
    while stack:
        x = stack.pop()
        for c in g.children(x):
            if c not in out:
                out.add(c)
                stack.append(c)
    return out


def _simple_paths(g, start, end):
    path = [start]
    seen = {start}

    def walk(node):
        if node == end:
            yield list(path)
            return
        for nb in sorted(_neighbours(g, node)):
            if nb in seen:
                continue
            seen.add(nb)
            path.append(nb)
            yield from walk(nb)
            path.pop()
            seen.discard(nb)

    yield from walk(start)


def _blocked(g, path, given) -> bool:
    for i in range(1, len(path) - 1):
        prev, node, nxt = path[i - 1], path[i], path[i + 1]
        collider = prev in g.parents(node) and nxt in g.parents(node)
        if collider:
            if node not in given and not (_descendants(g, node) & given):
                return True
        elif node in given:
            return True
    return False


def oracle_dsep(g, left, right, given=()) -> bool:
    """d-separation by checking every simple path against the blocking rules."""
    nodes = g.all_nodes
    if len(nodes) > MAX_ORACLE_NODES:
        raise OracleScopeError(f"path enumeration is limited to {MAX_ORACLE_NODES} nodes")
    given = set(given)
    for n in (left, right, *given):
        g._require(n)
    if left == right or left in given or right in given:
        raise ArgumentError("left and right must differ and lie outside the conditioning set")
    return all(_blocked(g, p, given) for p in _simple_paths(g, left, right))


def oracle_markov_boundary(g, target) -> frozenset:
    """Smallest set separating ``target`` from every other node (first in sorted order)."""
    nodes = sorted(g.all_nodes - {target})
    if len(nodes) + 1 > MAX_ORACLE_NODES:
        raise OracleScopeError(f"subset search is limited to {MAX_ORACLE_NODES} nodes")
    for size in range(len(nodes) + 1):
        for M in itertools.combinations(nodes, size):
            rest = set(nodes) - set(M)
            if all(oracle_dsep(g, target, r, M) for r in rest):
                return frozenset(M)
    return frozenset(nodes)


# -- gradients --

def fd_gradient(f: Callable, point, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``point``."""
    x = np.asarray(point, dtype=float).copy()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + eps
        fp = f(x.copy())
        x.flat[i] = orig - eps
        fm = f(x.copy())
        x.flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleScopeError(f"non-finite evaluation near coordinate {i}")
        grad.flat[i] = (fp - fm) / (2 * eps)
    return grad


# -- repairs --

@dataclass(frozen=True)
class CIConstraint:
    """``P(dependents | given)`` in the repair must equal the biased-data value.

    ``dependents`` may include :data:`H`, the classifier output.
    """

    dependents: tuple
    given: tuple


@dataclass(frozen=True)
class TinyUniverse:
    biased: Dataset
    predictor: Mapping  # feature-label tuple -> 0/1
    features: tuple
    spec: FairnessSpec
    k: int
    ci: tuple = ()
    aux: Optional[AuxStats] = None
    choice: Optional[StrategyChoice] = None

    def __post_init__(self):
        if not 0 <= self.k <= MAX_ADDED_ROWS:
            raise ArgumentError(f"k must lie in 0..{MAX_ADDED_ROWS}")
        n_types = int(np.prod([len(c.domain) for c in self.biased.schema.columns]))
        if n_types > 64:
            raise OracleScopeError(f"{n_types} row types exceed the tiny-universe limit of 64")

    def h(self, d: Dataset) -> np.ndarray:
        rows = zip(*[d.labels(f) for f in self.features])
        return np.array([self.predictor[r] for r in rows], dtype=float)


@dataclass(frozen=True)
class OracleInterval:
    low: float
    high: float
    survivors: int
    enumerated: int


@lru_cache(maxsize=64)
def _multisets(n_classes: int, k: int) -> np.ndarray:
    rows = []
    for size in range(k + 1):
        for combo in itertools.combinations_with_replacement(range(n_classes), size):
            rows.append(combo)
    out = np.zeros((len(rows), n_classes), dtype=np.int64)
    for i, combo in enumerate(rows):
        for c in combo:
            out[i, c] += 1
    out.setflags(write=False)
    return out


def _ci_key(cols, dependents, given):
    return [cols.index(v) for v in given], [cols.index(v) for v in dependents]


def enumerate_repairs(u: TinyUniverse, *, aux_tol: float = 0.0, ci_tol: float = 0.0) -> OracleInterval:
    """Extreme fairness values over consistent repairs with at most ``k`` added rows.

    Rows are collapsed into classes over the protected, admissible and
    constraint columns plus the classifier output.  Added rows may only land
    in constraint cells already observed in the biased data.  With zero
    tolerances the constraint checks are exact.
    """
    d, spec = u.biased, u.spec
    schema = d.schema
    aux_u = tuple(u.aux.u_vars) if u.aux is not None else ()
    aux_a = tuple(spec.admissible) if (u.aux is not None and u.aux.kind.conditional) else ()
    ci_vars = [v for c in u.ci for v in (*c.dependents, *c.given) if v != H]
    key_cols = list(dict.fromkeys([spec.protected, *spec.admissible, *ci_vars, *aux_u]))
    cols = key_cols + [H]

    # all realisable classes
    names = schema.names
    doms = [schema.column(n).domain for n in names]
    classes = {}
    for row in itertools.product(*doms):
        rec = dict(zip(names, row))
        h = u.predictor[tuple(rec[f] for f in u.features)]
        key = tuple(rec[c] for c in key_cols) + (str(int(h)),)
        classes.setdefault(key, None)
    class_keys = sorted(classes)
    index = {k: i for i, k in enumerate(class_keys)}

    hvals = u.h(d)
    labels = [d.labels(c) for c in key_cols]
    base = np.zeros(len(class_keys), dtype=np.int64)
    for i in range(d.n_rows):
        key = tuple(col[i] for col in labels) + (str(int(hvals[i])),)
        base[index[key]] += 1

    # positivity: a class may receive rows only if each constraint cell it falls in is observed
    allowed = np.ones(len(class_keys), dtype=bool)
    for c in u.ci:
        gpos, _ = _ci_key(cols, c.dependents, c.given)
        observed = {tuple(class_keys[i][p] for p in gpos) for i in np.flatnonzero(base)}
        for i, key in enumerate(class_keys):
            if tuple(key[p] for p in gpos) not in observed:
                allowed[i] = False
    allowed_idx = np.flatnonzero(allowed)
    n_allowed = len(allowed_idx)
    if n_allowed ** u.k > MAX_COMPLETIONS:
        raise OracleScopeError(f"{n_allowed}^{u.k} completions exceed the enumeration bound")
    ms = _multisets(n_allowed, u.k)
    add = np.zeros((ms.shape[0], len(class_keys)), dtype=np.int64)
    add[:, allowed_idx] = ms
    R = base[None, :] + add
    ok = np.ones(R.shape[0], dtype=bool)

    for c in u.ci:
        gpos, dpos = _ci_key(cols, c.dependents, c.given)
        cells = {}
        for i, key in enumerate(class_keys):
            cells.setdefault(tuple(key[p] for p in gpos), {}).setdefault(tuple(key[p] for p in dpos), []).append(i)
        for cell, deps in cells.items():
            all_idx = [i for v in deps.values() for i in v]
            nB = base[all_idx].sum()
            if nB == 0:
                continue
            nR = R[:, all_idx].sum(axis=1)
            for dep_idx in deps.values():
                mB = base[dep_idx].sum()
                mR = R[:, dep_idx].sum(axis=1)
                if ci_tol == 0:
                    ok &= mR * nB == mB * nR
                else:
                    ok &= np.abs(mR / nR - mB / nB) <= ci_tol + 1e-12

    if u.aux is not None:
        s_pos = cols.index(spec.protected)
        a_pos = [cols.index(v) for v in aux_a]
        u_pos = [cols.index(v) for v in aux_u]
        aux = u.aux
        for (s, a, uu), p in aux.table.items():
            in_cell = [i for i, key in enumerate(class_keys)
                       if key[s_pos] == s and tuple(key[q] for q in a_pos) == a and tuple(key[q] for q in u_pos) == uu]
            if aux.kind.conditional:
                in_ctx = [i for i, key in enumerate(class_keys)
                          if key[s_pos] == s and tuple(key[q] for q in a_pos) == a]
            else:
                in_ctx = [i for i, key in enumerate(class_keys) if key[s_pos] in (spec.s0, spec.s1)]
            num = R[:, in_cell].sum(axis=1) if in_cell else np.zeros(R.shape[0])
            den = R[:, in_ctx].sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                frac = np.where(den > 0, num / np.maximum(den, 1), 0.0)
            ok &= np.abs(frac - p) <= aux_tol + 1e-9

    survivors = R[ok]
    if survivors.shape[0] == 0:
        raise OracleScopeError("no consistent repair with the allowed number of added rows")
    values = _fairness_of_counts(survivors, class_keys, cols, spec)
    return OracleInterval(float(values.min()), float(values.max()), int(survivors.shape[0]), int(R.shape[0]))


def _fairness_of_counts(R, class_keys, cols, spec) -> np.ndarray:
    s_pos = cols.index(spec.protected)
    a_pos = [cols.index(v) for v in spec.admissible]
    h_pos = cols.index(H)
    h = np.array([int(k[h_pos]) for k in class_keys], dtype=float)
    a_vals = sorted({tuple(k[p] for p in a_pos) for k in class_keys})
    terms = []
    for a in a_vals:
        m = {}
        for s in (spec.s1, spec.s0):
            ind = np.array([k[s_pos] == s and tuple(k[p] for p in a_pos) == a for k in class_keys], dtype=float)
            m[s] = (R @ ind, R @ (ind * h))
        n1, n0 = m[spec.s1][0], m[spec.s0][0]
        both = (n1 > 0) & (n0 > 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            gap = np.abs(m[spec.s1][1] / n1 - m[spec.s0][1] / n0)
        terms.append((np.where(both, gap, 0.0), both))
    total = sum(t for t, _ in terms)
    count = sum(b.astype(int) for _, b in terms)
    return total / count


# -- random instances --

TINY_COLUMNS = ("S", "U1", "U2", "X", "Y")


def _tiny_schema(admissible) -> Schema:
    cols = tuple(Column(n, ("0", "1")) for n in TINY_COLUMNS)
    return Schema(cols, "Y", "S", "0", "1", tuple(admissible), "1")


def random_instance(rng: np.random.Generator, strategy: Strategy, k: int = 4, n_rows: int = 10) -> TinyUniverse:
    """Random tiny instance whose constraints admit at least one repair.

    The auxiliary table (when the strategy needs one) is read off a hidden
    repair built by duplicating complete constraint cells of the biased data,
    so the hidden repair satisfies every constraint exactly.
    """
    strategy = Strategy(strategy)
    for _ in range(1000):
        adm = ("Y",) if rng.random() < 0.5 else ()
        if strategy is Strategy.MISSING_A:
            adm = ("Y",)
        schema = _tiny_schema(adm)
        spec = FairnessSpec.from_schema(schema)
        features = ("U1", "U2", "X")
        predictor = {r: int(rng.random() < 0.5) for r in itertools.product("01", repeat=3)}
        codes = rng.integers(0, 2, size=(n_rows, len(TINY_COLUMNS)))
        d = Dataset(schema, codes, "biased")
        # every admissible value seen must contain both groups
        a_ok = True
        a_col = d.col("Y") if adm else np.zeros(n_rows, dtype=int)
        for a in np.unique(a_col):
            if len(np.unique(d.col("S")[a_col == a])) < 2:
                a_ok = False
        if not a_ok:
            continue
        U = ("U1", "U2")
        if strategy is Strategy.EQUALITY:
            ci = (CIConstraint((H,), ("S", *adm)),)
            return TinyUniverse(d, predictor, features, spec, k, ci, None, StrategyChoice(Strategy.EQUALITY))
        if strategy is Strategy.NO_EXTERNAL:
            ci = (CIConstraint((H,), ("S", *adm, *U)),)
            return TinyUniverse(d, predictor, features, spec, k, ci, None, StrategyChoice(Strategy.NO_EXTERNAL, U))
        if strategy is Strategy.MISSING_A:
            ci = (CIConstraint((*adm, H), ("S", *U)),)
            cell_vars = ("S", *U)
        else:
            ci = (CIConstraint((H,), ("S", *adm, *U)),)
            cell_vars = ("S", *adm, *U)
        hidden = _hidden_repair(rng, d, cell_vars, k)
        if strategy is Strategy.EXACT:
            aux = _aux_from(hidden, AuxKind.U_GIVEN_SA, U, spec)
            choice = StrategyChoice(Strategy.EXACT, U, U, aux)
        elif strategy is Strategy.PARTIAL_U:
            up = (U[int(rng.integers(2))],)
            aux = _aux_from(hidden, AuxKind.UPRIME_GIVEN_SA, up, spec)
            choice = StrategyChoice(Strategy.PARTIAL_U, U, up, aux)
        else:
            aux = _aux_from(hidden, AuxKind.SU_JOINT, U, spec)
            choice = StrategyChoice(Strategy.MISSING_A, U, (), aux)
        return TinyUniverse(d, predictor, features, spec, k, ci, aux, choice)
    raise OracleScopeError("could not draw a valid tiny instance")


def _hidden_repair(rng, d: Dataset, cell_vars, k) -> Dataset:
    idx = [d.schema.index(v) for v in cell_vars]
    keys = [tuple(r) for r in d.codes[:, idx].tolist()]
    cells = {}
    for i, key in enumerate(keys):
        cells.setdefault(key, []).append(i)
    budget = int(rng.integers(0, k + 1))
    extra = []
    for key in sorted(cells, key=lambda _: rng.random()):
        rows = cells[key]
        if len(rows) <= budget and rng.random() < 0.7:
            extra.extend(rows)
            budget -= len(rows)
    return d.take(np.concatenate([np.arange(d.n_rows), np.array(extra, dtype=int)]).astype(int))


def _aux_from(d: Dataset, kind, u_vars, spec) -> AuxStats:
    from .cra import estimate_aux

    return estimate_aux(d.with_provenance("unbiased"), kind, u_vars, spec)


def check_containment(u: TinyUniverse, *, aux_tol: float = 0.0, ci_tol: float = 0.0, tol: float = 1e-9):
    """Return ``(ok, oracle_interval, consistent_range)`` for one instance."""
    preds = u.h(u.biased)
    rng_ = compute_range(u.biased, preds, u.spec, u.choice)
    oi = enumerate_repairs(u, aux_tol=aux_tol, ci_tol=ci_tol)
    ok = rng_.clb - tol <= oi.low and oi.high <= rng_.cub + tol
    return ok, oi, rng_
