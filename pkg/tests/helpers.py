"""Shared fixtures-as-functions for the test modules."""

import itertools

import numpy as np

from crafair.causal_graph import CausalDiagram, DataCollectionDiagram
from crafair.data import Column, Dataset, Schema


def fig3_base():
    return CausalDiagram(
        {"Race", "Z", "ZIPCode", "W", "Y"},
        {("Race", "Z"), ("ZIPCode", "Z"), ("ZIPCode", "W"), ("W", "Y")},
        "Y",
        "Race",
    )


def fig4_base(admissible=()):
    return CausalDiagram(
        {"S", "X1", "X2", "X3", "X4", "Y"},
        {("S", "X1"), ("S", "X2"), ("X3", "Y"), ("X4", "Y")},
        "Y",
        "S",
        admissible,
    )


FIG4_PARENTS = {"G1": {"S", "X4"}, "G2": {"X2", "X4"}, "G3": {"X2", "Y"}, "G4": {"Y"}}


def random_dag(rng, n_nodes, p=0.35, selection=False):
    names = [f"N{i}" for i in range(n_nodes)]
    edges = {(names[i], names[j]) for i, j in itertools.combinations(range(n_nodes), 2) if rng.random() < p}
    base = CausalDiagram(set(names), edges, names[-1], names[0])
    if not selection:
        return base
    parents = {n for n in names if rng.random() < 0.4} or {names[1]}
    return DataCollectionDiagram(base, parents)


def binary_schema(names, outcome="Y", protected="S", admissible=()):
    cols = tuple(Column(n, ("0", "1")) for n in names)
    return Schema(cols, outcome, protected, "0", "1", tuple(admissible), "1")


def make_dataset(names, rows, admissible=(), provenance="biased"):
    """Binary dataset from a list of row tuples (integers 0/1)."""
    schema = binary_schema(names, admissible=admissible)
    return Dataset(schema, np.array(rows, dtype=np.int64).reshape(-1, len(names)), provenance)


def cell_rows(spec):
    """Rows and predictions from ``{(s, u): (n, positives)}`` over columns S, U, Y."""
    rows, preds = [], []
    for (s, u), (n, pos) in sorted(spec.items()):
        for i in range(n):
            rows.append((s, u, i % 2))
            preds.append(1.0 if i < pos else 0.0)
    return rows, np.array(preds)
