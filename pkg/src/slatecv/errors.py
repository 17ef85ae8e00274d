from typing import Optional


class SlateError(Exception):
    """Base class for errors raised by slatecv."""


class ValidationError(SlateError, ValueError):
    """Malformed input. ``line`` is 1-based when the input came from a file."""

    def __init__(self, message: str, *, field: Optional[str] = None, line: Optional[int] = None, index: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.field = field
        self.line = line
        self.index = index


class CoverageError(ValidationError):
    """A taken (or targeted) action has zero logging probability."""


class CapacityError(SlateError):
    """An enumeration would exceed its configured cap."""


class UndefinedEstimateError(SlateError, ArithmeticError):
    """An estimator is undefined on a dataset with positive probability."""
