"""Exception types shared across the package."""

from __future__ import annotations


class GfeError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(GfeError, ValueError):
    pass


class NotPositiveDefinite(GfeError, ArithmeticError):
    def __init__(self, message: str, jitter: float | None = None):
        super().__init__(message)
        self.jitter = jitter


class MissingColumn(GfeError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ParseError(GfeError, ValueError):
    def __init__(self, row: int, column: str, value: str = ""):
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")
        self.row = row
        self.column = column
        self.value = value


class InvalidParameter(GfeError, ValueError):
    pass


class EmptySplit(GfeError, ValueError):
    pass


class EmptyDataset(GfeError, ValueError):
    pass


class EmptyGroup(GfeError, ValueError):
    pass


class DegenerateData(GfeError, ValueError):
    pass


class DegenerateNoise(GfeError, ValueError):
    pass


class ZeroZ(GfeError, ValueError):
    """Raised where a nonzero imbalance vector is required."""


class ModelFormatError(GfeError, ValueError):
    pass
