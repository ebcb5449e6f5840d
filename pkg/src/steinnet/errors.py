"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SteinNetError(Exception):
    """Base class for all package errors."""


class SpecError(SteinNetError, ValueError):
    """A network description violates one of its invariants."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(SpecError):
    """A config file could not be parsed into a NetworkSpec."""


class NegativeRate(SpecError):
    """A scaling scheme produced a negative Poisson rate."""


class NotPSD(SteinNetError, ValueError):
    pass


class OutOfRange(SteinNetError, ValueError):
    pass


class EventBudgetExceeded(SteinNetError, RuntimeError):
    pass


class StopTooSmall(SteinNetError, ValueError):
    pass


class NonPositiveDiagonal(SteinNetError, ValueError):
    pass


class EmptySample(SteinNetError, ValueError):
    pass


class InsufficientReplications(SteinNetError, ValueError):
    pass
