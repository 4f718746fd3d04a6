"""Exception hierarchy shared by every module."""


class CraError(Exception):
    """Base class for all errors raised by crafair."""


class ArgumentError(CraError, ValueError):
    """Invalid combination of arguments."""


class UnknownNodeError(CraError, NameError):
    """A node name that does not exist in the diagram."""


class GraphError(CraError, ValueError):
    """Malformed diagram (cycle, dangling edge, bad roles)."""


class LoadError(CraError, ValueError):
    """Malformed input file. Carries the offending location when known."""

    def __init__(self, message, *, path=None, row=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{': '.join([', '.join(loc), message]) if loc else message}")
        self.path = path
        self.row = row
        self.column = column


class EvaluationError(CraError):
    """A fairness query cannot be evaluated on the given data."""


class StrategyError(CraError):
    """The structural precondition of a bound strategy does not hold."""


class BoundError(CraError):
    """A consistent range cannot be computed from the available strata."""


class AuxCoverageError(CraError):
    """Auxiliary statistics do not cover a required cell or column."""


class GenerationError(CraError):
    """Synthetic data generation failed."""


class EncodingError(CraError, ValueError):
    """A value cannot be encoded by a fitted model."""


class TrainingError(CraError):
    """Optimisation diverged or was misconfigured."""


class OracleScopeError(CraError):
    """Instance is outside what the brute-force oracles can handle."""
