"""Synthetic binary populations from a structural causal model, and selection mechanisms.

The default model has the structure

    S -> X1,  S -> X2,  X3 -> Y,  X4 -> Y

so the outcome is independent of the protected attribute in the population,
while ``X2`` carries information about ``S``.  Selection mechanisms attach a
node ``C`` to different parent sets; only the mechanism with parents
``{X2, Y}`` can make a classifier trained on the selected rows unfair.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .causal_graph import CausalDiagram, DataCollectionDiagram, markov_boundary, d_separated
from .data import Column, Dataset, Schema
from .errors import ArgumentError, GenerationError, GraphError

__all__ = [
    "Cpt",
    "ScmSpec",
    "SelectionSpec",
    "MECHANISMS",
    "sample_population",
    "apply_selection",
    "scenario_check",
    "random_scm",
    "random_selection",
    "train_test_split",
]

log = logging.getLogger(__name__)

MECHANISMS = {
    "R": (),
    "G1": ("S", "X4"),
    "G2": ("X2", "X4"),
    "G3": ("X2", "Y"),
    "G4": ("Y",),
}
SCENARIO_PROBS = {"S1": (0.9, 0.1), "S2": (0.55, 0.45)}
SCENARIO_GAP = 0.05


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


@dataclass(frozen=True)
class Cpt:
    """``P(node = 1 | parents)`` for a binary node, keyed by parent value tuples."""

    parents: tuple
    table: Mapping

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        table = {tuple(int(v) for v in k): float(p) for k, p in self.table.items()}
        expected = {tuple(int(b) for b in np.binary_repr(i, len(self.parents)))
                    for i in range(2 ** len(self.parents))} if self.parents else {()}
        if set(table) != expected:
            raise ArgumentError(f"CPT over {self.parents} must have exactly the rows {sorted(expected)}")
        for k, p in table.items():
            if not 0.0 <= p <= 1.0:
                raise ArgumentError(f"CPT row {k} has probability {p} outside [0, 1]")
        object.__setattr__(self, "table", dict(sorted(table.items())))

    def prob(self, parent_values: np.ndarray) -> np.ndarray:
        """Vectorised lookup; ``parent_values`` is n x |parents| of 0/1."""
        if not self.parents:
            return np.full(parent_values.shape[0], self.table[()])
        weights = 2 ** np.arange(len(self.parents) - 1, -1, -1)
        idx = parent_values @ weights
        lut = np.array([self.table[k] for k in sorted(self.table)])
        return lut[idx]

    def to_dict(self) -> dict:
        return {"parents": list(self.parents),
                "p": {"".join(map(str, k)) or "": v for k, v in self.table.items()}}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Cpt":
        parents = tuple(doc.get("parents", ()))
        p = doc["p"]
        if not isinstance(p, Mapping):
            p = {"": p}
        return cls(parents, {tuple(int(c) for c in k): v for k, v in p.items()})


def _bern_linear(parents, base, coefs):
    rows = {}
    for i in range(2 ** len(parents)):
        bits = tuple(int(b) for b in np.binary_repr(i, len(parents))) if parents else ()
        rows[bits] = base + sum(c * b for c, b in zip(coefs, bits))
    return Cpt(parents, rows)


def _bern_logit(parents, base, coefs):
    rows = {}
    for i in range(2 ** len(parents)):
        bits = tuple(int(b) for b in np.binary_repr(i, len(parents))) if parents else ()
        rows[bits] = _sigmoid(base + sum(c * b for c, b in zip(coefs, bits)))
    return Cpt(parents, rows)


@dataclass(frozen=True)
class ScmSpec:
    """Binary structural causal model; nodes are sampled in topological order."""

    cpts: Mapping
    seed: int = 0
    outcome: str = "Y"
    protected: str = "S"
    admissible: tuple = ("Y",)
    order: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cpts = {k: (v if isinstance(v, Cpt) else Cpt.from_dict(v)) for k, v in self.cpts.items()}
        object.__setattr__(self, "cpts", dict(sorted(cpts.items())))
        object.__setattr__(self, "admissible", tuple(self.admissible))
        for node, cpt in cpts.items():
            for p in cpt.parents:
                if p not in cpts:
                    raise GraphError(f"{node!r} has unknown parent {p!r}")
        for role in (self.outcome, self.protected):
            if role not in cpts:
                raise GraphError(f"role node {role!r} has no CPT")
        object.__setattr__(self, "order", self._toposort())
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= int(self.seed) < 2 ** 64:
            raise ArgumentError("seed must be a 64-bit unsigned integer")

    def _toposort(self) -> tuple:
        done, order = set(), []
        pending = sorted(self.cpts)
        while pending:
            ready = [n for n in pending if set(self.cpts[n].parents) <= done]
            if not ready:
                raise GraphError(f"CPT parents form a cycle among {pending}")
            for n in ready:
                done.add(n)
                order.append(n)
            pending = [n for n in pending if n not in done]
        return tuple(order)

    @classmethod
    def default(cls, seed: int = 0) -> "ScmSpec":
        spec = cls(
            {
                "S": _bern_linear((), 0.5, ()),
                "X1": _bern_linear(("S",), 0.5, (0.3,)),
                "X2": _bern_linear(("S",), 0.3, (0.4,)),
                "X3": _bern_linear((), 0.5, ()),
                "X4": _bern_linear((), 0.5, ()),
                # logit-additive so a logistic model is correctly specified and no
                # covariate cell sits exactly at probability one half
                "Y": _bern_logit(("X3", "X4"), -2.5, (1.8, 1.4)),
            },
            seed=seed,
        )
        g = spec.diagram()
        assert markov_boundary(g, "Y") == {"X3", "X4"}
        assert all(d_separated(g, "S", x) for x in ("X3", "X4"))
        return spec

    @property
    def nodes(self) -> tuple:
        return tuple(self.cpts)

    def diagram(self) -> CausalDiagram:
        edges = {(p, n) for n, c in self.cpts.items() for p in c.parents}
        return CausalDiagram(set(self.cpts), edges, self.outcome, self.protected,
                             set(self.admissible) - {self.protected})

    def schema(self) -> Schema:
        cols = tuple(Column(n, ("0", "1")) for n in self.nodes)
        return Schema(cols, self.outcome, self.protected, "0", "1", self.admissible, "1")

    def with_overrides(self, cpts: Optional[Mapping] = None, **kw) -> "ScmSpec":
        merged = dict(self.cpts)
        for k, v in (cpts or {}).items():
            merged[k] = v if isinstance(v, Cpt) else Cpt.from_dict(v)
        fields = {"seed": self.seed, "outcome": self.outcome, "protected": self.protected,
                  "admissible": self.admissible}
        fields.update(kw)
        return ScmSpec(merged, **fields)

    def to_dict(self) -> dict:
        return {"cpts": {k: v.to_dict() for k, v in self.cpts.items()}, "seed": int(self.seed),
                "outcome": self.outcome, "protected": self.protected, "admissible": list(self.admissible)}

    def marginal(self, node: str) -> float:
        """Exact ``P(node = 1)`` by enumerating all joint configurations."""
        names = list(self.order)
        total = 0.0
        for i in range(2 ** len(names)):
            bits = dict(zip(names, (int(b) for b in np.binary_repr(i, len(names)))))
            p = 1.0
            for n in names:
                q = self.cpts[n].table[tuple(bits[x] for x in self.cpts[n].parents)]
                p *= q if bits[n] else 1 - q
            if bits[node]:
                total += p
        return total


def sample_population(spec: ScmSpec, n: int, seed: Optional[int] = None) -> Dataset:
    """``n`` i.i.d. ancestral samples, deterministic given the seed."""
    if n < 1:
        raise ArgumentError("n must be at least 1")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    values = {}
    for node in spec.order:
        cpt = spec.cpts[node]
        pa = np.column_stack([values[p] for p in cpt.parents]) if cpt.parents else np.zeros((n, 0), dtype=np.int64)
        values[node] = (rng.random(n) < cpt.prob(pa)).astype(np.int64)
    codes = np.column_stack([values[c] for c in spec.nodes])
    return Dataset(spec.schema(), codes, "unbiased")


@dataclass(frozen=True)
class SelectionSpec:
    """``P(C = 1 | Pa(C))``.  ``table`` keys are parent value tuples in ``parents`` order."""

    mechanism: str
    scenario: str = "S1"
    table: Optional[Mapping] = None
    parents: Optional[tuple] = None

    def __post_init__(self):
        if self.parents is None:
            if self.mechanism not in MECHANISMS:
                raise ArgumentError(f"unknown mechanism {self.mechanism!r}; choose from {sorted(MECHANISMS)}")
            object.__setattr__(self, "parents", MECHANISMS[self.mechanism])
        object.__setattr__(self, "parents", tuple(self.parents))
        if self.scenario not in SCENARIO_PROBS:
            raise ArgumentError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIO_PROBS)}")
        table = self.table if self.table is not None else self._default_table()
        table = {tuple(int(v) for v in k): float(p) for k, p in table.items()}
        cpt = Cpt(self.parents, table)
        for k, p in cpt.table.items():
            if not 0.0 < p <= 1.0:
                raise ArgumentError(f"selection probability {p} for {k} must lie in (0, 1]")
        object.__setattr__(self, "table", cpt.table)

    def _default_table(self) -> dict:
        hi, lo = SCENARIO_PROBS[self.scenario]
        k = len(self.parents)
        if k == 0:
            return {(): 0.5}
        rows = {}
        for i in range(2 ** k):
            bits = tuple(int(b) for b in np.binary_repr(i, k))
            if k == 1:
                rows[bits] = hi if bits[0] == 1 else lo
            else:
                rows[bits] = hi if len(set(bits)) == 1 else lo
        return rows

    def cpt(self) -> Cpt:
        return Cpt(self.parents, self.table)

    def to_dict(self) -> dict:
        return {"mechanism": self.mechanism, "scenario": self.scenario, "parents": list(self.parents),
                "table": {"".join(map(str, k)): v for k, v in self.table.items()}}


def apply_selection(d: Dataset, sel: SelectionSpec, seed: int, base: Optional[CausalDiagram] = None):
    """Keep each row independently with its selection probability.

    Returns the biased dataset and the data-collection diagram.  ``base``
    defaults to the diagram implied by the default model when its node set
    matches ``d``.
    """
    if d.provenance == "biased":
        raise ArgumentError("selection must be applied to an unbiased dataset")
    for p in sel.parents:
        if not d.schema.has(p):
            raise ArgumentError(f"selection parent {p!r} is not a column")
    rng = np.random.default_rng(seed)
    pa = d.codes[:, [d.schema.index(p) for p in sel.parents]] if sel.parents else np.zeros((d.n_rows, 0), dtype=np.int64)
    keep = rng.random(d.n_rows) < sel.cpt().prob(pa)
    if not keep.any():
        raise GenerationError("selection dropped every row")
    biased = d.take(np.flatnonzero(keep), provenance="biased")
    if base is None:
        base = ScmSpec.default().diagram()
        if set(base.nodes) != set(d.schema.names):
            raise ArgumentError("pass the base diagram for non-default schemas")
    return biased, DataCollectionDiagram(base, set(sel.parents))


def train_test_split(d: Dataset, test_fraction: float, seed: int):
    if not 0 < test_fraction < 1:
        raise ArgumentError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d.n_rows)
    k = int(round(test_fraction * d.n_rows))
    return d.take(np.sort(perm[k:])), d.take(np.sort(perm[:k]))


def _lookup_bayes(train: Dataset, features: Sequence[str]):
    """Majority-label lookup table over feature cells, fitted on ``train``."""
    idx = [train.schema.index(f) for f in features]
    keys = train.codes[:, idx]
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    pos = np.bincount(inv.reshape(-1), weights=train.y, minlength=len(uniq))
    cnt = np.bincount(inv.reshape(-1), minlength=len(uniq))
    table = {tuple(k): int(pos[i] * 2 >= cnt[i]) for i, k in enumerate(uniq.tolist())}

    def predict(d: Dataset) -> np.ndarray:
        rows = d.codes[:, [d.schema.index(f) for f in features]].tolist()
        return np.array([table.get(tuple(r), 0) for r in rows], dtype=float)

    return predict


def scenario_check(unbiased: Dataset, biased: Dataset, sel: SelectionSpec) -> dict:
    """Compare biased and target fairness of a lookup predictor fitted on the biased rows.

    Scenario S1 is meant to make them deviate and S2 to make them agree; the
    result is reported, not enforced, because some structures cannot deviate.
    """
    from .fairness import FairnessSpec, empirical_fairness

    schema = unbiased.schema
    features = [c for c in schema.names if c not in (schema.outcome, schema.protected)]
    predict = _lookup_bayes(biased, features)
    spec = FairnessSpec.from_schema(schema)
    f_target = empirical_fairness(unbiased, predict(unbiased), spec).value
    f_biased = empirical_fairness(biased, predict(biased), spec).value
    gap = abs(f_target - f_biased)
    as_intended = gap > SCENARIO_GAP if sel.scenario == "S1" else gap <= SCENARIO_GAP
    out = {"f_target": f_target, "f_biased": f_biased, "gap": gap, "as_intended": bool(as_intended)}
    log.info("scenario %s/%s check: %s", sel.mechanism, sel.scenario, out)
    return out


def random_scm(rng: np.random.Generator, n_u: int = 3, n_extra: int = 1, edge_prob: float = 0.5) -> ScmSpec:
    """Random binary model with protected ``S``, attributes ``U1..Uk``, extras ``X1..`` and outcome ``Y``.

    ``S`` is a root, every ``U`` may depend on ``S`` and earlier ``U``s, and
    ``Y`` depends on at least one ``U``.  CPT entries are drawn in [0.1, 0.9].
    """
    us = [f"U{i + 1}" for i in range(n_u)]
    xs = [f"X{i + 1}" for i in range(n_extra)]
    parents = {"S": ()}
    for i, u in enumerate(us):
        cand = ["S"] + us[:i]
        parents[u] = tuple(p for p in cand if rng.random() < edge_prob)
    ypa = tuple(u for u in us if rng.random() < edge_prob) or (us[int(rng.integers(n_u))],)
    parents["Y"] = ypa
    for x in xs:
        cand = ["S"] + us
        parents[x] = tuple(p for p in cand if rng.random() < edge_prob)
    cpts = {}
    for node, pa in parents.items():
        rows = {}
        for i in range(2 ** len(pa)):
            bits = tuple(int(b) for b in np.binary_repr(i, len(pa))) if pa else ()
            rows[bits] = float(rng.uniform(0.1, 0.9))
        cpts[node] = Cpt(pa, rows)
    return ScmSpec(cpts, seed=int(rng.integers(2 ** 32)), admissible=())


def random_selection(rng: np.random.Generator, parents: Sequence[str], low: float = 0.05, high: float = 0.95) -> SelectionSpec:
    k = len(parents)
    rows = {tuple(int(b) for b in np.binary_repr(i, k)) if k else (): float(rng.uniform(low, high))
            for i in range(2 ** k)}
    return SelectionSpec("custom", "S1", rows, tuple(parents))
