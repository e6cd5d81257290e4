"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MFDBSDEError(Exception):
    """Base class for every error raised by the package."""


class AlignmentError(MFDBSDEError, ValueError):
    """A delay or shift is not an integer multiple of the time step."""


class ThinningError(MFDBSDEError, ValueError):
    """Total jump intensity times dt is not below one."""


class BudgetError(MFDBSDEError):
    """A scenario tree would exceed the configured node budget."""


class IncompleteLayerError(MFDBSDEError, ValueError):
    """Values are missing for some node of a layer."""


class MissingMeasureError(MFDBSDEError, ValueError):
    """A jump-norm was requested without a jump specification."""


class TreeMismatchError(MFDBSDEError, ValueError):
    """Two processes or triples live on different trees."""


class DomainError(MFDBSDEError, ValueError):
    """An argument lies outside the domain of a formula."""


class ConfigError(MFDBSDEError, ValueError):
    """Invalid configuration; ``path`` is a JSON-pointer to the culprit."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class GeneratorEvaluationError(MFDBSDEError, ArithmeticError):
    """The driver returned a non-finite value."""


class NonConvergenceError(MFDBSDEError):
    """An iteration ran out of budget; ``trace`` holds its history."""

    def __init__(self, message: str, trace=None) -> None:
        self.trace = trace
        super().__init__(message)


class DivergenceError(NonConvergenceError):
    """Picard distances grew for too many consecutive iterations."""
