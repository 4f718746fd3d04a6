"""Discretised tabular datasets, schema sidecars and (s, a, u) stratification."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ArgumentError, LoadError

__all__ = [
    "ABSENT",
    "Column",
    "Schema",
    "Dataset",
    "StrataTable",
    "load_csv",
    "load_schema",
    "infer_schema",
    "stratify",
    "cond_positive_rate",
    "PROVENANCES",
]

ABSENT = None
PROVENANCES = ("biased", "unbiased", "unknown")
DEFAULT_BINS = 4


@dataclass(frozen=True)
class Column:
    name: str
    domain: tuple
    bins: Optional[int] = None
    edges: Optional[tuple] = None  # interior cut points of a quantile-binned column

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(str(v) for v in self.domain))
        if not self.domain:
            raise ArgumentError(f"column {self.name!r} has an empty domain")
        if len(set(self.domain)) != len(self.domain):
            raise ArgumentError(f"column {self.name!r} has duplicate domain labels")
        if self.edges is not None:
            object.__setattr__(self, "edges", tuple(float(e) for e in self.edges))

    def code_of(self, label) -> int:
        try:
            return self.domain.index(str(label))
        except ValueError:
            raise ArgumentError(f"{label!r} is not in the domain of {self.name!r}") from None

    def to_dict(self) -> dict:
        out = {"name": self.name, "domain": list(self.domain)}
        if self.bins is not None:
            out["bins"] = self.bins
        if self.edges is not None:
            out["edges"] = list(self.edges)
        return out


@dataclass(frozen=True)
class Schema:
    """Ordered categorical columns plus fairness roles.

    The outcome column's domain is stored as ``(negative, positive)`` so its
    integer code is the 0/1 label.  Role columns may be missing from a
    projected schema (e.g. a label-free external sample).
    """

    columns: tuple
    outcome: str
    protected: str
    s0: str
    s1: str
    admissible: tuple = ()
    positive: str = "1"

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "admissible", tuple(self.admissible))
        object.__setattr__(self, "s0", str(self.s0))
        object.__setattr__(self, "s1", str(self.s1))
        object.__setattr__(self, "positive", str(self.positive))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ArgumentError("duplicate column names in schema")
        cols = {c.name: c for c in self.columns}
        if self.outcome in cols:
            dom = cols[self.outcome].domain
            if len(dom) != 2 or dom[1] != self.positive:
                raise ArgumentError(
                    f"outcome {self.outcome!r} needs a two-label domain ending with the "
                    f"positive label {self.positive!r}, got {list(dom)}"
                )
        if self.protected in cols:
            dom = cols[self.protected].domain
            for v in (self.s0, self.s1):
                if v not in dom:
                    raise ArgumentError(f"protected value {v!r} not in domain {list(dom)}")
        if self.s0 == self.s1:
            raise ArgumentError("s0 and s1 must differ")

    @property
    def names(self) -> tuple:
        return tuple(c.name for c in self.columns)

    def column(self, name) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise ArgumentError(f"unknown column {name!r}")

    def index(self, name) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ArgumentError(f"unknown column {name!r}") from None

    def has(self, name) -> bool:
        return name in self.names

    def project(self, names: Iterable[str]) -> "Schema":
        keep = set(names)
        return replace(self, columns=tuple(c for c in self.columns if c.name in keep))

    def with_roles(self, **roles) -> "Schema":
        return replace(self, **roles)

    def to_dict(self) -> dict:
        return {
            "columns": [c.to_dict() for c in self.columns],
            "outcome": {"name": self.outcome, "positive": self.positive},
            "protected": {"name": self.protected, "s0": self.s0, "s1": self.s1},
            "admissible": list(self.admissible),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Schema":
        try:
            columns = [
                Column(c["name"], c.get("domain") or ("?",), c.get("bins"), c.get("edges"))
                for c in doc["columns"]
            ]
            outcome = doc["outcome"]
            if isinstance(outcome, Mapping):
                y_name, positive = outcome["name"], str(outcome.get("positive", "1"))
            else:
                y_name, positive = outcome, "1"
            prot = doc["protected"]
            return _normalise(columns, y_name, positive, prot["name"], prot["s0"], prot["s1"],
                              doc.get("admissible", []), raw_domains={
                                  c["name"]: c.get("domain") for c in doc["columns"]})
        except KeyError as exc:
            raise LoadError(f"schema is missing key {exc.args[0]!r}") from None


def _normalise(columns, y_name, positive, s_name, s0, s1, admissible, raw_domains=None):
    """Reorder the outcome domain to (negative, positive) and build the schema."""
    out = []
    for c in columns:
        if raw_domains is not None and not raw_domains.get(c.name) and c.bins is None:
            raise LoadError(f"column {c.name!r} needs a domain or a bins directive")
        if c.name == y_name and c.bins is None:
            dom = list(c.domain)
            if positive not in dom:
                raise LoadError(f"positive label {positive!r} not in outcome domain {dom}")
            if len(dom) != 2:
                raise LoadError(f"outcome {y_name!r} must be binary, got domain {dom}")
            dom.remove(positive)
            c = replace(c, domain=(dom[0], positive))
        out.append(c)
    return Schema(tuple(out), y_name, s_name, str(s0), str(s1), tuple(admissible), positive)


def load_schema(path) -> Schema:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})",
                        path=path) from None
    except OSError as exc:
        raise LoadError(str(exc), path=path) from None
    try:
        return Schema.from_dict(doc)
    except (LoadError, ArgumentError) as exc:
        raise LoadError(str(exc), path=path) from None


def infer_schema(header, rows, *, outcome, protected, s0, s1, admissible=(), positive=None) -> Schema:
    """Every column categorical with the sorted observed values as its domain."""
    columns = []
    for j, name in enumerate(header):
        values = sorted({r[j] for r in rows})
        columns.append(Column(name, values))
    if positive is None:
        y_dom = sorted({r[list(header).index(outcome)] for r in rows}) if outcome in header else []
        positive = "1" if "1" in y_dom else (y_dom[-1] if y_dom else "1")
    if outcome in header:
        y_col = next(c for c in columns if c.name == outcome)
        if len(y_col.domain) == 1:
            other = "0" if positive == "1" else "1"
            columns[columns.index(y_col)] = Column(outcome, (other, positive))
    s_col = next((c for c in columns if c.name == protected), None)
    if s_col is not None:
        missing = [v for v in (str(s0), str(s1)) if v not in s_col.domain]
        if missing:
            columns[columns.index(s_col)] = Column(protected, tuple(s_col.domain) + tuple(missing))
    return _normalise(columns, outcome, str(positive), protected, s0, s1, admissible)


@dataclass(frozen=True)
class Dataset:
    """Integer-coded categorical rows; code ``j`` of a column is ``domain[j]``."""

    schema: Schema
    codes: np.ndarray
    provenance: str = "unknown"

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[1] != len(self.schema.columns):
            raise ArgumentError(
                f"codes must be an n x {len(self.schema.columns)} array, got shape {codes.shape}"
            )
        for j, c in enumerate(self.schema.columns):
            col = codes[:, j]
            if col.size and (col.min() < 0 or col.max() >= len(c.domain)):
                raise ArgumentError(f"codes out of range for column {c.name!r}")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        if self.provenance not in PROVENANCES:
            raise ArgumentError(f"provenance must be one of {PROVENANCES}")

    @property
    def n_rows(self) -> int:
        return int(self.codes.shape[0])

    def __len__(self):
        return self.n_rows

    def col(self, name) -> np.ndarray:
        return self.codes[:, self.schema.index(name)]

    def labels(self, name) -> list:
        dom = self.schema.column(name).domain
        return [dom[c] for c in self.col(name)]

    @property
    def y(self) -> np.ndarray:
        return self.col(self.schema.outcome)

    def s_code(self, label) -> int:
        return self.schema.column(self.schema.protected).code_of(label)

    def take(self, idx, provenance=None) -> "Dataset":
        return Dataset(self.schema, self.codes[np.asarray(idx)], provenance or self.provenance)

    def project(self, names) -> "Dataset":
        names = [n for n in self.schema.names if n in set(names)]
        idx = [self.schema.index(n) for n in names]
        return Dataset(self.schema.project(names), self.codes[:, idx], self.provenance)

    def with_provenance(self, provenance) -> "Dataset":
        return Dataset(self.schema, self.codes, provenance)

    @classmethod
    def from_records(cls, schema: Schema, records: Sequence[Mapping], provenance="unknown"):
        codes = np.empty((len(records), len(schema.columns)), dtype=np.int64)
        for i, rec in enumerate(records):
            for j, c in enumerate(schema.columns):
                try:
                    codes[i, j] = c.code_of(rec[c.name])
                except KeyError:
                    raise LoadError("missing value", row=i, column=c.name) from None
                except ArgumentError:
                    raise LoadError(f"value {rec[c.name]!r} outside domain {list(c.domain)}",
                                    row=i, column=c.name) from None
        return cls(schema, codes, provenance)

    def to_csv(self, path) -> None:
        path = Path(path)
        domains = [c.domain for c in self.schema.columns]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.schema.names)
            for row in self.codes:
                w.writerow([domains[j][v] for j, v in enumerate(row)])


def _read_csv(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise LoadError(str(exc), path=path) from None
    if not rows:
        raise LoadError("file is empty", path=path)
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(set(header)) != len(header):
        raise LoadError("duplicate header names", path=path)
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise LoadError(f"expected {len(header)} fields, got {len(r)}", path=path, row=i + 1)
        for j, v in enumerate(r):
            if v == "":
                raise LoadError("missing value", path=path, row=i + 1, column=header[j])
    if not body:
        raise LoadError("file has a header but no rows", path=path)
    return header, body


def _quantile_edges(values: np.ndarray, bins: int) -> tuple:
    qs = np.quantile(values, np.linspace(0, 1, bins + 1)[1:-1])
    return tuple(float(e) for e in np.unique(qs))


def load_csv(path, schema_source=None, *, provenance="unknown", **roles) -> Dataset:
    """Load and validate a CSV.

    ``schema_source`` is a sidecar path, a :class:`Schema`, or ``None`` to infer
    one (then ``roles`` must supply ``outcome``, ``protected``, ``s0``, ``s1``
    and optionally ``admissible`` and ``positive``).  Columns declared with a
    ``bins`` directive are quantile-discretised at load time.
    """
    path = Path(path)
    header, body = _read_csv(path)
    if schema_source is None:
        try:
            schema = infer_schema(header, body, **roles)
        except TypeError as exc:
            raise ArgumentError(f"inferred schemas need role arguments: {exc}") from None
    elif isinstance(schema_source, Schema):
        schema = schema_source
    else:
        schema = load_schema(schema_source)

    pos = {}
    for c in schema.columns:
        if c.name not in header:
            raise LoadError("declared column missing from header", path=path, column=c.name)
        pos[c.name] = header.index(c.name)

    columns = list(schema.columns)
    codes = np.empty((len(body), len(columns)), dtype=np.int64)
    for j, c in enumerate(columns):
        raw = [r[pos[c.name]] for r in body]
        if c.bins is not None or c.edges is not None:
            try:
                x = np.array([float(v) for v in raw])
            except ValueError:
                bad = next(i for i, v in enumerate(raw) if not _is_float(v))
                raise LoadError(f"non-numeric value {raw[bad]!r} in binned column",
                                path=path, row=bad + 1, column=c.name) from None
            edges = c.edges if c.edges is not None else _quantile_edges(x, c.bins or DEFAULT_BINS)
            domain = tuple(f"bin{k}" for k in range(len(edges) + 1))
            columns[j] = Column(c.name, domain, c.bins, edges)
            codes[:, j] = np.searchsorted(np.asarray(edges), x, side="right")
            continue
        index = {v: k for k, v in enumerate(c.domain)}
        for i, v in enumerate(raw):
            k = index.get(v)
            if k is None:
                raise LoadError(f"value {v!r} outside domain {list(c.domain)}",
                                path=path, row=i + 1, column=c.name)
            codes[i, j] = k
    schema = replace(schema, columns=tuple(columns))
    return Dataset(schema, codes, provenance)


def _is_float(v) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


@dataclass(frozen=True)
class StrataTable:
    """Per-cell row counts and prediction mass, keyed by ``(s, a-tuple, u-tuple)`` labels."""

    s_name: str
    a_names: tuple
    u_names: tuple
    keys: tuple
    n: np.ndarray
    mass: np.ndarray
    row_cell: np.ndarray = field(repr=False)
    a_keys: tuple = ()
    _index: Mapping = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.keys)})

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key):
        return key in self._index

    def index_of(self, s, a=(), u=()):
        return self._index.get((str(s), tuple(a), tuple(u)))

    def cell(self, s, a=(), u=()):
        i = self.index_of(s, a, u)
        if i is None:
            return ABSENT
        return int(self.n[i]), float(self.mass[i])

    def items(self):
        for i, k in enumerate(self.keys):
            yield k, (int(self.n[i]), float(self.mass[i]))

    def a_values(self) -> list:
        """Observed admissible tuples in domain order."""
        return list(self.a_keys)


def _group(d: Dataset, names: Sequence[str]):
    """Unique observed code tuples of ``names`` and the per-row group index."""
    if not names:
        return np.zeros((1, 0), dtype=np.int64), np.zeros(d.n_rows, dtype=np.int64)
    sub = d.codes[:, [d.schema.index(n) for n in names]]
    uniq, inverse = np.unique(sub, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def stratify(d: Dataset, preds, u: Iterable[str] = (), admissible: Optional[Iterable[str]] = None) -> StrataTable:
    """Count rows and sum predictions per observed ``(s, a, u)`` cell.

    Keys hold domain labels and are sorted by domain order.  ``admissible``
    defaults to the schema's admissible set.
    """
    preds = np.asarray(preds, dtype=float).reshape(-1)
    if preds.shape[0] != d.n_rows:
        raise ArgumentError(f"got {preds.shape[0]} predictions for {d.n_rows} rows")
    schema = d.schema
    a_names = tuple(schema.admissible if admissible is None else admissible)
    u_names = tuple(u)
    for n in (schema.protected, *a_names, *u_names):
        if not schema.has(n):
            raise ArgumentError(f"unknown column {n!r}")
    if set(u_names) & (set(a_names) | {schema.protected}):
        raise ArgumentError("u must not overlap the protected or admissible attributes")
    names = (schema.protected, *a_names, *u_names)
    uniq, inverse = _group(d, names)
    n = np.bincount(inverse, minlength=len(uniq)).astype(np.int64)
    mass = np.bincount(inverse, weights=preds, minlength=len(uniq))
    doms = [schema.column(c).domain for c in names]
    keys = []
    na = len(a_names)
    for row in uniq:
        labels = [doms[j][v] for j, v in enumerate(row)]
        keys.append((labels[0], tuple(labels[1:1 + na]), tuple(labels[1 + na:])))
    a_rows = sorted({tuple(row[1:1 + na]) for row in uniq.tolist()})
    a_keys = tuple(tuple(doms[1 + j][v] for j, v in enumerate(r)) for r in a_rows)
    return StrataTable(schema.protected, a_names, u_names, tuple(keys), n, mass, inverse, a_keys)


def cond_positive_rate(t: StrataTable, s, a=(), u=()):
    """Mean prediction in the cell, or ``ABSENT`` when the cell is unobserved."""
    cell = t.cell(s, a, u)
    if cell is ABSENT or cell[0] == 0:
        return ABSENT
    return cell[1] / cell[0]
