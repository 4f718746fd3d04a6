"""Logistic regression with a penalty on the consistent upper bound of unfairness.

The objective is ``mean log-loss + lambda * max(soft_cub, tau)``, minimised by
full-batch gradient descent with a fixed step.  ``soft_cub`` is the selected
bound program evaluated on predicted probabilities; below ``tau`` the
penalty is flat and contributes no gradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .causal_graph import DataCollectionDiagram
from .cra import BoundProgram, Strategy, StrategyChoice, compile_bound, select_strategy
from .data import Dataset
from .errors import ArgumentError, EncodingError, LoadError, TrainingError
from .fairness import FairnessSpec, FairnessValue, empirical_fairness

__all__ = [
    "Encoder",
    "LogisticModel",
    "TrainConfig",
    "EvalReport",
    "Objective",
    "train_fair",
    "predict",
    "evaluate",
    "f1_score",
    "load_model",
    "save_model",
]


@dataclass(frozen=True)
class Encoder:
    """One-hot encoding of categorical columns, one slot per domain label."""

    columns: tuple  # ((name, (label, ...)), ...)

    @classmethod
    def for_schema(cls, schema, use_protected: bool = False) -> "Encoder":
        skip = {schema.outcome} | (set() if use_protected else {schema.protected})
        return cls(tuple((c.name, tuple(c.domain)) for c in schema.columns if c.name not in skip))

    @property
    def width(self) -> int:
        return sum(len(dom) for _, dom in self.columns)

    def feature_names(self) -> list:
        return [f"{name}={v}" for name, dom in self.columns for v in dom]

    def transform(self, d: Dataset) -> np.ndarray:
        X = np.zeros((d.n_rows, self.width))
        offset = 0
        for name, dom in self.columns:
            if not d.schema.has(name):
                raise EncodingError(f"dataset lacks encoded column {name!r}")
            src = d.schema.column(name).domain
            lut = np.empty(len(src), dtype=np.int64)
            for j, label in enumerate(src):
                try:
                    lut[j] = dom.index(label)
                except ValueError:
                    lut[j] = -1
            codes = lut[d.col(name)]
            if (codes < 0).any():
                bad = src[int(d.col(name)[np.flatnonzero(codes < 0)[0]])]
                raise EncodingError(f"value {bad!r} of column {name!r} was not seen at training time")
            X[np.arange(d.n_rows), offset + codes] = 1.0
            offset += len(dom)
        return X

    def to_dict(self) -> dict:
        return {"columns": [{"name": n, "domain": list(dom)} for n, dom in self.columns]}

    @classmethod
    def from_dict(cls, doc) -> "Encoder":
        return cls(tuple((c["name"], tuple(str(v) for v in c["domain"])) for c in doc["columns"]))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LogisticModel:
    encoder: Encoder
    weights: np.ndarray
    bias: float
    config_echo: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != self.encoder.width:
            raise ArgumentError(f"expected {self.encoder.width} weights, got {w.shape[0]}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    def decision(self, d: Dataset) -> np.ndarray:
        return self.encoder.transform(d) @ self.weights + self.bias

    def predict_proba(self, d: Dataset) -> np.ndarray:
        return _sigmoid(self.decision(d))

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "weights": [float(x) for x in self.weights],
                "bias": self.bias, "config_echo": self.config_echo}

    @classmethod
    def from_dict(cls, doc) -> "LogisticModel":
        try:
            return cls(Encoder.from_dict(doc["encoder"]), np.array(doc["weights"], dtype=float),
                       float(doc["bias"]), doc.get("config_echo", {}))
        except (KeyError, TypeError) as exc:
            raise LoadError(f"malformed model document: {exc}") from None


def save_model(m: LogisticModel, path) -> None:
    Path(path).write_text(json.dumps(m.to_dict(), indent=2, sort_keys=True) + "\n")


def load_model(path) -> LogisticModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})", path=path) from None
    except OSError as exc:
        raise LoadError(str(exc), path=path) from None
    return LogisticModel.from_dict(doc)


def predict(m: LogisticModel, d: Dataset, mode: str = "hard") -> np.ndarray:
    """``proba`` gives sigmoid scores; ``hard`` thresholds them at 0.5, ties going to 1."""
    p = m.predict_proba(d)
    if mode == "proba":
        return p
    if mode == "hard":
        return (m.decision(d) >= 0).astype(float)
    raise ArgumentError(f"mode must be 'hard' or 'proba', got {mode!r}")


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.0
    lam: float = 0.0
    eta: float = 0.1
    max_epochs: int = 2000
    tol: float = 1e-7
    seed: int = 0
    init_scale: float = 0.01
    use_protected_feature: bool = False
    strict_strata: bool = False
    admissible: Optional[tuple] = None
    diagram: Optional[DataCollectionDiagram] = None
    aux: tuple = ()
    choice: Optional[StrategyChoice] = None

    def __post_init__(self):
        if not 0 <= self.tau <= 1:
            raise ArgumentError("tau must lie in [0, 1]")
        if self.lam < 0:
            raise ArgumentError("lambda must be non-negative")
        if self.eta <= 0:
            raise ArgumentError("eta must be positive")
        if self.max_epochs < 1:
            raise ArgumentError("max_epochs must be at least 1")
        if self.tol < 0:
            raise ArgumentError("tol must be non-negative")
        object.__setattr__(self, "aux", tuple(self.aux))
        if self.admissible is not None:
            object.__setattr__(self, "admissible", tuple(self.admissible))

    def echo(self) -> dict:
        return {
            "tau": self.tau, "lambda": self.lam, "eta": self.eta, "max_epochs": self.max_epochs,
            "tol": self.tol, "seed": self.seed, "init_scale": self.init_scale,
            "use_protected_feature": self.use_protected_feature, "strict_strata": self.strict_strata,
            "admissible": None if self.admissible is None else list(self.admissible),
            "strategy": None if self.choice is None else self.choice.to_dict(),
        }


@dataclass
class EvalReport:
    f1: float
    accuracy: float
    fairness_hard: FairnessValue
    cub_final: Optional[float] = None
    epochs_run: int = 0
    loss_trace: list = field(default_factory=list)
    strategy: Optional[str] = None

    def row(self) -> dict:
        return {"f1": self.f1, "accuracy": self.accuracy, "fairness": self.fairness_hard.value,
                "cub_final": self.cub_final, "epochs_run": self.epochs_run,
                "final_loss": self.loss_trace[-1] if self.loss_trace else None,
                "strategy": self.strategy}


class Objective:
    """Penalised training objective over ``theta = (weights, bias)``."""

    def __init__(self, X: np.ndarray, y: np.ndarray, program: Optional[BoundProgram], lam: float, tau: float):
        self.X = X
        self.y = np.asarray(y, dtype=float)
        self.program = program
        self.lam = lam
        self.tau = tau

    def logloss(self, theta) -> float:
        z = self.X @ theta[:-1] + theta[-1]
        return float(np.mean(np.logaddexp(0.0, z) - self.y * z))

    def value_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        z = self.X @ theta[:-1] + theta[-1]
        p = _sigmoid(z)
        n = len(self.y)
        loss = float(np.mean(np.logaddexp(0.0, z) - self.y * z))
        dz = (p - self.y) / n
        cub = None
        if self.program is not None and self.lam > 0:
            cub, _, g = self.program.evaluate(p, want_grad=True)
            if cub > self.tau:
                loss += self.lam * cub
                dz = dz + self.lam * g * p * (1 - p)
            else:
                loss += self.lam * self.tau
        grad = np.concatenate([self.X.T @ dz, [dz.sum()]])
        return loss, grad, cub

    def value(self, theta) -> float:
        return self.value_and_grad(theta)[0]


def _resolve_choice(d: Dataset, cfg: TrainConfig, spec: FairnessSpec) -> Optional[StrategyChoice]:
    if cfg.lam == 0:
        return cfg.choice
    if cfg.choice is not None:
        return cfg.choice
    if cfg.diagram is not None:
        return select_strategy(cfg.diagram, cfg.aux, spec)
    return StrategyChoice(Strategy.EQUALITY, reason="no diagram given; penalising biased-data fairness")


def train_fair(d_biased: Dataset, cfg: TrainConfig = TrainConfig()):
    """Fit a logistic model under the fairness penalty; returns ``(model, report)``."""
    y = d_biased.y
    if min(int((y == 0).sum()), int((y == 1).sum())) < 2:
        raise TrainingError("training data needs at least two rows of each class")
    spec = FairnessSpec.from_schema(d_biased.schema, cfg.admissible)
    encoder = Encoder.for_schema(d_biased.schema, cfg.use_protected_feature)
    X = encoder.transform(d_biased)
    choice = _resolve_choice(d_biased, cfg, spec)
    program = compile_bound(d_biased, spec, choice, strict=cfg.strict_strata) if (choice and cfg.lam > 0) else None
    obj = Objective(X, y, program, cfg.lam, cfg.tau)

    rng = np.random.default_rng(cfg.seed)
    theta = rng.normal(0.0, cfg.init_scale, X.shape[1] + 1)
    trace = []
    prev = math.inf
    epochs = 0
    cub = None
    for epoch in range(cfg.max_epochs):
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            loss, grad, cub = obj.value_and_grad(theta)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingError(f"objective diverged at epoch {epoch}; try a smaller learning rate eta")
        trace.append(loss)
        epochs = epoch + 1
        if abs(prev - loss) < cfg.tol:
            break
        prev = loss
        theta = theta - cfg.eta * grad
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            loss, _, cub = obj.value_and_grad(theta)
        if not math.isfinite(loss):
            raise TrainingError("objective diverged; try a smaller learning rate eta")
        trace.append(loss)

    echo = cfg.echo()
    if choice is not None:
        echo["strategy"] = choice.to_dict()
    model = LogisticModel(encoder, theta[:-1].copy(), float(theta[-1]), echo)
    report = evaluate(model, d_biased, spec, require_unbiased=False)
    report.cub_final = cub
    report.epochs_run = epochs
    report.loss_trace = trace
    report.strategy = choice.strategy.value if choice is not None else None
    return model, report


def f1_score(y_true, y_pred) -> float:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int((y_true & y_pred).sum())
    fp = int((~y_true & y_pred).sum())
    fn = int((y_true & ~y_pred).sum())
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def evaluate(m: LogisticModel, d_test: Dataset, spec: Optional[FairnessSpec] = None, *,
             require_unbiased: bool = True) -> EvalReport:
    """F1 of the positive class, accuracy and hard-prediction fairness on ``d_test``."""
    if require_unbiased and d_test.provenance == "biased":
        raise ArgumentError("evaluation data must not be selection-biased")
    spec = spec or FairnessSpec.from_schema(d_test.schema)
    hard = predict(m, d_test, "hard")
    y = d_test.y
    return EvalReport(
        f1=f1_score(y, hard),
        accuracy=float(np.mean(hard == y)),
        fairness_hard=empirical_fairness(d_test, hard, spec),
    )
