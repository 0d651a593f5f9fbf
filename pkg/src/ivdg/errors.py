"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class IvdgError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(IvdgError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(IvdgError, ValueError):
    """Array shapes do not conform."""


class SingularDesignError(IvdgError, ArithmeticError):
    """A least-squares design matrix is rank deficient."""

    def __init__(self, message: str, condition: float = float("nan")) -> None:
        super().__init__(message)
        self.condition = condition


class WeakInstrumentError(SingularDesignError):
    """The first-stage fitted regressors are (numerically) rank deficient."""


class LabelingError(IvdgError, ValueError):
    """A label rule produced a degenerate (single-class) labeling."""


class ContractViolation(IvdgError, RuntimeError):
    """An internal usage contract was broken, e.g. a stale forward cache."""


class ConfigError(IvdgError, ValueError):
    """An experiment configuration is malformed."""

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
