"""Exception types shared across the package."""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for all errors raised by tailharness."""


class ValidationError(HarnessError, ValueError):
    """A value violates a documented invariant."""


class ParseError(HarnessError, ValueError):
    """Input text could not be parsed.

    ``line`` is the 1-based line number of the offending input line, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BackendError(HarnessError):
    """A backend could not be reached or violated its protocol."""
