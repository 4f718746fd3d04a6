"""Causal and data-collection diagrams with the structural queries used by the bounds.

A :class:`CausalDiagram` is a DAG over the attributes of a dataset with three
designated roles: the outcome ``Y``, the protected attribute ``S`` and the
admissible set ``A``.  A :class:`DataCollectionDiagram` augments it with a sink
node ``C`` whose parents are the attributes that drive inclusion of a record.

The classifier under audit only ever reads features, never the outcome, so
every "features independent of C" test below ranges over ``nodes - {Y}``.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .errors import ArgumentError, GraphError, LoadError, UnknownNodeError

__all__ = [
    "CausalDiagram",
    "DataCollectionDiagram",
    "Diagnosis",
    "d_separated",
    "d_separated_sets",
    "markov_boundary",
    "features_independent_of_selection",
    "select_U",
    "diagnose",
    "diagram_from_dict",
    "diagram_to_dict",
    "load_diagram",
    "save_diagram",
]

# Upper bound on the number of optional Markov-boundary nodes searched by select_U.
MAX_U_SEARCH = 16


def _fs(items) -> frozenset:
    if items is None:
        return frozenset()
    if isinstance(items, str):
        return frozenset([items])
    return frozenset(items)


@dataclass(frozen=True)
class CausalDiagram:
    nodes: frozenset
    edges: frozenset
    outcome: str
    protected: str
    admissible: frozenset = frozenset()
    _parents: Mapping = field(init=False, repr=False, compare=False)
    _children: Mapping = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _fs(self.nodes))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        object.__setattr__(self, "admissible", _fs(self.admissible))
        parents = {n: set() for n in self.nodes}
        children = {n: set() for n in self.nodes}
        for edge in self.edges:
            if len(edge) != 2:
                raise GraphError(f"edge {edge!r} is not a (parent, child) pair")
            p, c = edge
            for n in (p, c):
                if n not in self.nodes:
                    raise GraphError(f"edge {edge!r} references unknown node {n!r}")
            if p == c:
                raise GraphError(f"self-loop on {p!r}")
            parents[c].add(p)
            children[p].add(c)
        object.__setattr__(self, "_parents", {k: frozenset(v) for k, v in parents.items()})
        object.__setattr__(self, "_children", {k: frozenset(v) for k, v in children.items()})
        for role, name in (("outcome", self.outcome), ("protected", self.protected)):
            if name not in self.nodes:
                raise GraphError(f"{role} node {name!r} is not in the diagram")
        missing = self.admissible - self.nodes
        if missing:
            raise GraphError(f"admissible nodes {sorted(missing)} are not in the diagram")
        if self.protected in self.admissible:
            raise GraphError("the protected attribute cannot be admissible")
        _check_acyclic(self.nodes, self._children)

    # -- graph view shared with DataCollectionDiagram --
    @property
    def all_nodes(self) -> frozenset:
        return self.nodes

    def parents(self, node) -> frozenset:
        self._require(node)
        return self._parents[node]

    def children(self, node) -> frozenset:
        self._require(node)
        return self._children[node]

    def _require(self, node):
        if node not in self._parents:
            raise UnknownNodeError(f"unknown node {node!r}")

    @property
    def base(self) -> "CausalDiagram":
        return self

    @property
    def features(self) -> frozenset:
        """Attributes a classifier may read: everything except the outcome."""
        return self.nodes - {self.outcome}

    def with_roles(self, *, outcome=None, protected=None, admissible=None) -> "CausalDiagram":
        return CausalDiagram(
            self.nodes,
            self.edges,
            outcome if outcome is not None else self.outcome,
            protected if protected is not None else self.protected,
            self.admissible if admissible is None else admissible,
        )


@dataclass(frozen=True)
class DataCollectionDiagram:
    base: CausalDiagram
    selection_parents: frozenset
    selection: str = "C"
    _parents: Mapping = field(init=False, repr=False, compare=False)
    _children: Mapping = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "selection_parents", _fs(self.selection_parents))
        if self.selection in self.base.nodes:
            raise GraphError(f"selection node {self.selection!r} clashes with an attribute")
        # an empty parent set models selection completely at random
        missing = self.selection_parents - self.base.nodes
        if missing:
            raise GraphError(f"selection parents {sorted(missing)} are not in the diagram")
        parents = dict(self.base._parents)
        children = {k: set(v) for k, v in self.base._children.items()}
        parents[self.selection] = self.selection_parents
        for p in self.selection_parents:
            children[p].add(self.selection)
        children[self.selection] = set()
        object.__setattr__(self, "_parents", parents)
        object.__setattr__(self, "_children", {k: frozenset(v) for k, v in children.items()})

    @property
    def all_nodes(self) -> frozenset:
        return self.base.nodes | {self.selection}

    @property
    def nodes(self) -> frozenset:
        return self.base.nodes

    @property
    def edges(self) -> frozenset:
        return self.base.edges | {(p, self.selection) for p in self.selection_parents}

    @property
    def outcome(self) -> str:
        return self.base.outcome

    @property
    def protected(self) -> str:
        return self.base.protected

    @property
    def admissible(self) -> frozenset:
        return self.base.admissible

    @property
    def features(self) -> frozenset:
        return self.base.features

    def parents(self, node) -> frozenset:
        self._require(node)
        return self._parents[node]

    def children(self, node) -> frozenset:
        self._require(node)
        return self._children[node]

    def _require(self, node):
        if node not in self._parents:
            raise UnknownNodeError(f"unknown node {node!r}")

    def with_roles(self, *, outcome=None, protected=None, admissible=None) -> "DataCollectionDiagram":
        base = self.base.with_roles(outcome=outcome, protected=protected, admissible=admissible)
        return DataCollectionDiagram(base, self.selection_parents, self.selection)


Graph = "CausalDiagram | DataCollectionDiagram"


def _check_acyclic(nodes, children):
    indeg = {n: 0 for n in nodes}
    for n in nodes:
        for c in children[n]:
            indeg[c] += 1
    queue = deque(sorted(n for n, d in indeg.items() if d == 0))
    seen = 0
    while queue:
        n = queue.popleft()
        seen += 1
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if seen != len(nodes):
        cyc = sorted(n for n, d in indeg.items() if d > 0)
        raise GraphError(f"diagram has a directed cycle through {cyc}")


def _ancestors_inclusive(g, nodes) -> set:
    out = set()
    stack = list(nodes)
    while stack:
        n = stack.pop()
        if n in out:
            continue
        out.add(n)
        stack.extend(g.parents(n))
    return out


def _reachable(g, sources, given) -> set:
    """Nodes with an active trail from any source given ``given``.

    Ball-passing over (node, direction) states: "up" means the ball arrived
    from a child, "down" means it arrived from a parent.
    """
    anc = _ancestors_inclusive(g, given)
    visited = set()
    reach = set()
    queue = deque((s, "up") for s in sources)
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node not in given:
            reach.add(node)
        if direction == "up" and node not in given:
            for p in g.parents(node):
                queue.append((p, "up"))
            for c in g.children(node):
                queue.append((c, "down"))
        elif direction == "down":
            if node not in given:
                for c in g.children(node):
                    queue.append((c, "down"))
            if node in anc:
                for p in g.parents(node):
                    queue.append((p, "up"))
    return reach


def _check_names(g, names):
    for n in names:
        g._require(n)


def d_separated(g, left, right, given=()) -> bool:
    """True iff ``left`` and ``right`` are d-separated by ``given`` in ``g``."""
    given = _fs(given)
    _check_names(g, [left, right, *given])
    if left == right:
        raise ArgumentError("left and right must be different nodes")
    if left in given or right in given:
        raise ArgumentError("left and right must not be in the conditioning set")
    return right not in _reachable(g, [left], given)


def d_separated_sets(g, left, right, given=()) -> bool:
    """Set version of :func:`d_separated`: every pair in ``left x right`` is separated."""
    left, right, given = _fs(left), _fs(right), _fs(given)
    _check_names(g, [*left, *right, *given])
    if left & right or left & given or right & given:
        raise ArgumentError("left, right and given must be pairwise disjoint")
    if not left or not right:
        return True
    return not (_reachable(g, sorted(left), given) & right)


def markov_boundary(g, target) -> frozenset:
    """Parents, children and co-parents of ``target``."""
    g._require(target)
    out = set(g.parents(target)) | set(g.children(target))
    for c in g.children(target):
        out |= g.parents(c)
    out.discard(target)
    return frozenset(out)


def features_independent_of_selection(g: DataCollectionDiagram, U=(), *, extra=()) -> bool:
    """Check ``(features u extra) _||_ C | S, A, U`` in the data-collection diagram."""
    given = {g.protected} | set(g.admissible) | set(U)
    left = (set(g.features) | set(extra)) - given
    return d_separated_sets(g, left, {g.selection}, given)


def select_U(g: DataCollectionDiagram, available: Optional[Iterable[str]] = None) -> frozenset:
    """Pick the stratification set U for the bound formulas.

    Preference: no outcome in U, then U covered by ``available``, then smallest,
    then lexicographic.  Candidates are ``Pa(C) - {Y}`` extended by subsets of
    the outcome's Markov boundary.
    """
    Y, S, A = g.outcome, g.protected, set(g.admissible)
    available = None if available is None else _fs(available)
    skip = {Y, S, g.selection} | A
    base = frozenset(g.selection_parents - skip)
    extras = sorted(markov_boundary(g, Y) - skip - base)[:MAX_U_SEARCH]

    first_valid = None
    for size in range(len(extras) + 1):
        for combo in itertools.combinations(extras, size):
            cand = base | frozenset(combo)
            if not features_independent_of_selection(g, cand):
                continue
            if available is None or cand <= available:
                return _checked(g, cand)
            if first_valid is None:
                first_valid = cand
    if first_valid is not None:
        return _checked(g, first_valid)
    return _checked(g, frozenset(g.selection_parents - {S, g.selection} - A))


def _checked(g, U):
    assert features_independent_of_selection(g, U), f"selected U={sorted(U)} does not separate C"
    return U


@dataclass(frozen=True)
class Diagnosis:
    originally_unfair: bool
    selection_induces_unfairness: bool
    original_witnesses: tuple
    selection_witnesses: tuple
    c1: bool
    c2: bool
    chosen_U: frozenset

    @property
    def witnesses(self) -> tuple:
        return tuple(dict.fromkeys(self.original_witnesses + self.selection_witnesses))

    def to_dict(self) -> dict:
        return {
            "originally_unfair": self.originally_unfair,
            "selection_induces_unfairness": self.selection_induces_unfairness,
            "original_witnesses": list(self.original_witnesses),
            "selection_witnesses": list(self.selection_witnesses),
            "c1_outcome_drives_selection": self.c1,
            "c2_protected_linked_parent": self.c2,
            "chosen_U": sorted(self.chosen_U),
        }

    def explain(self) -> str:
        lines = []
        if self.originally_unfair:
            lines.append(
                "base distribution is unfair: relevant attributes "
                f"{list(self.original_witnesses)} stay dependent on the protected attribute"
            )
        else:
            lines.append("base distribution is fair: no Markov-boundary attribute of the outcome "
                         "is linked to the protected attribute")
        lines.append(("C1 holds: " if self.c1 else "C1 fails: ")
                     + "the outcome is " + ("" if self.c1 else "not ") + "a parent of the selection node")
        lines.append(("C2 holds: " if self.c2 else "C2 fails: ")
                     + ("a selection parent is the protected attribute or linked to it"
                        if self.c2 else "no selection parent is linked to the protected attribute"))
        if self.selection_induces_unfairness:
            lines.append(f"selection can induce unfairness (witnesses: {list(self.selection_witnesses)})")
        else:
            lines.append("selection alone cannot induce unfairness")
        lines.append(f"stratification set U = {sorted(self.chosen_U)}")
        return "\n".join(lines)


def _linked_to_protected(base: CausalDiagram, x) -> bool:
    S, A = base.protected, base.admissible
    if x == S:
        return True
    if x in A:
        return False
    return not d_separated(base, x, S, A)


def diagnose(g: DataCollectionDiagram) -> Diagnosis:
    """Structural check for unfairness of the base distribution and of the selection."""
    base = g.base
    Y, S, A = base.outcome, base.protected, base.admissible
    original = [x for x in sorted(markov_boundary(base, Y) - A) if _linked_to_protected(base, x)]
    c1 = Y in g.selection_parents
    c2_wit = []
    if S in g.selection_parents:
        c2_wit.append(S)
    for x in sorted(g.selection_parents - A - {Y, S}):
        if _linked_to_protected(base, x):
            c2_wit.append(x)
    c2 = bool(c2_wit)
    induced = c1 and c2
    return Diagnosis(
        originally_unfair=bool(original),
        selection_induces_unfairness=induced,
        original_witnesses=tuple(original),
        selection_witnesses=tuple(c2_wit) if induced else (),
        c1=c1,
        c2=c2,
        chosen_U=select_U(g),
    )


# -- JSON --

def diagram_to_dict(g) -> dict:
    base = g.base
    out = {
        "nodes": sorted(base.nodes),
        "edges": sorted([list(e) for e in base.edges]),
        "outcome": base.outcome,
        "protected": base.protected,
        "admissible": sorted(base.admissible),
    }
    if isinstance(g, DataCollectionDiagram):
        out["selection"] = {"name": g.selection, "parents": sorted(g.selection_parents)}
    return out


def diagram_from_dict(doc: dict):
    try:
        base = CausalDiagram(
            nodes=doc["nodes"],
            edges=[tuple(e) for e in doc.get("edges", [])],
            outcome=doc["outcome"],
            protected=doc["protected"],
            admissible=doc.get("admissible", []),
        )
    except KeyError as exc:
        raise GraphError(f"diagram is missing required key {exc.args[0]!r}") from None
    sel = doc.get("selection")
    if sel is None:
        return base
    return DataCollectionDiagram(base, sel.get("parents", []), sel.get("name", "C"))


def load_diagram(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})",
                        path=path) from None
    except OSError as exc:
        raise LoadError(str(exc), path=path) from None
    try:
        return diagram_from_dict(doc)
    except GraphError as exc:
        raise LoadError(str(exc), path=path) from None


def save_diagram(g, path) -> None:
    Path(path).write_text(json.dumps(diagram_to_dict(g), indent=2, sort_keys=True) + "\n")
