"""Conditional statistical parity on a dataset and a prediction vector.

The query averages, over admissible strata ``a`` in which both protected
groups are observed, the absolute gap ``rate(s1, a) - rate(s0, a)`` of
positive predictions.  The soft form replaces hard 0/1 predictions with
probabilities and is differentiable almost everywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .data import Dataset, Schema, stratify
from .errors import ArgumentError, EvaluationError

__all__ = [
    "FairnessSpec",
    "FairnessValue",
    "empirical_fairness",
    "soft_fairness",
    "soft_fairness_grad",
    "SkippedStrataWarning",
]

MODES = ("statistical_parity", "equal_opportunity", "conditional")


class SkippedStrataWarning(UserWarning):
    """Some admissible strata lack one of the protected groups."""


@dataclass(frozen=True)
class FairnessSpec:
    protected: str
    s0: str
    s1: str
    admissible: tuple = ()
    outcome: Optional[str] = None
    mode: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "admissible", tuple(self.admissible))
        object.__setattr__(self, "s0", str(self.s0))
        object.__setattr__(self, "s1", str(self.s1))
        if self.s0 == self.s1:
            raise ArgumentError("s0 and s1 must differ")
        if self.protected in self.admissible:
            raise ArgumentError("the protected attribute cannot be admissible")
        implied = self._implied_mode()
        if self.mode is None:
            object.__setattr__(self, "mode", implied)
        elif self.mode not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}")
        elif self.mode != implied:
            raise ArgumentError(f"mode {self.mode!r} is inconsistent with admissible={list(self.admissible)}")

    def _implied_mode(self) -> str:
        if not self.admissible:
            return "statistical_parity"
        if self.outcome is not None and self.admissible == (self.outcome,):
            return "equal_opportunity"
        return "conditional"

    @classmethod
    def from_schema(cls, schema: Schema, admissible: Optional[Iterable[str]] = None) -> "FairnessSpec":
        adm = schema.admissible if admissible is None else tuple(admissible)
        return cls(schema.protected, schema.s0, schema.s1, tuple(adm), schema.outcome)

    def to_dict(self) -> dict:
        return {"protected": {"name": self.protected, "s0": self.s0, "s1": self.s1},
                "admissible": list(self.admissible), "mode": self.mode}


@dataclass(frozen=True)
class FairnessValue:
    value: float
    per_a_terms: dict
    signs: dict
    skipped: tuple = field(default=())

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "per_a": [{"a": list(a), "gap": g, "larger": self.signs[a]} for a, g in self.per_a_terms.items()],
            "skipped_a": [list(a) for a in self.skipped],
        }


def _sign_label(gap: float) -> str:
    if gap > 0:
        return "s1"
    if gap < 0:
        return "s0"
    return "tie"


def _check_groups(d: Dataset, spec: FairnessSpec):
    col = d.schema.column(spec.protected)
    allowed = {col.code_of(spec.s0), col.code_of(spec.s1)}
    extra = sorted({col.domain[c] for c in np.unique(d.col(spec.protected))} - {col.domain[c] for c in allowed})
    if extra:
        raise EvaluationError(
            f"protected attribute {spec.protected!r} has values {extra} besides {spec.s0!r}/{spec.s1!r}"
        )


def _evaluate(d: Dataset, values: np.ndarray, spec: FairnessSpec, want_grad: bool):
    if values.shape[0] != d.n_rows:
        raise ArgumentError(f"got {values.shape[0]} predictions for {d.n_rows} rows")
    _check_groups(d, spec)
    t = stratify(d, values, (), spec.admissible)
    gaps, signs, skipped, pairs = {}, {}, [], []
    for a in t.a_values():
        i1, i0 = t.index_of(spec.s1, a), t.index_of(spec.s0, a)
        if i1 is None or i0 is None:
            skipped.append(a)
            continue
        gap = t.mass[i1] / t.n[i1] - t.mass[i0] / t.n[i0]
        gaps[a] = float(gap)
        signs[a] = _sign_label(gap)
        pairs.append((a, i1, i0))
    if not gaps:
        raise EvaluationError(f"no admissible stratum contains both groups for {spec.to_dict()}")
    if skipped:
        warnings.warn(f"skipped admissible strata lacking a group: {[list(a) for a in skipped]}",
                      SkippedStrataWarning, stacklevel=3)
    k = len(gaps)
    value = float(sum(abs(gaps[a]) for a, _, _ in pairs) / k)
    fv = FairnessValue(min(max(value, 0.0), 1.0), gaps, signs, tuple(skipped))
    if not want_grad:
        return fv, None
    coef = np.zeros(len(t.keys))
    for a, i1, i0 in pairs:
        sg = np.sign(gaps[a])
        coef[i1] += sg / (t.n[i1] * k)
        coef[i0] -= sg / (t.n[i0] * k)
    return fv, coef[t.row_cell]


def empirical_fairness(d: Dataset, preds, spec: FairnessSpec) -> FairnessValue:
    """Fairness query on hard 0/1 predictions."""
    preds = np.asarray(preds, dtype=float).reshape(-1)
    if not np.all((preds == 0) | (preds == 1)):
        raise ArgumentError("empirical_fairness expects hard 0/1 predictions; use soft_fairness")
    return _evaluate(d, preds, spec, False)[0]


def soft_fairness(d: Dataset, probs, spec: FairnessSpec) -> FairnessValue:
    """Fairness query with predicted probabilities in place of positive counts."""
    probs = _check_probs(probs)
    return _evaluate(d, probs, spec, False)[0]


def soft_fairness_grad(d: Dataset, probs, spec: FairnessSpec):
    """Soft fairness value and its gradient with respect to each row's probability.

    At a zero gap the subgradient 0 is used.
    """
    probs = _check_probs(probs)
    return _evaluate(d, probs, spec, True)


def _check_probs(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=float).reshape(-1)
    if not np.all((probs >= 0) & (probs <= 1)):
        raise ArgumentError("probabilities must lie in [0, 1]")
    return probs
