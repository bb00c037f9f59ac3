"""Exception types shared across the package."""

from __future__ import annotations


class LiftedCausalError(Exception):
    """Base class for all errors raised by this package."""


class ModelValidationError(LiftedCausalError):
    """A model failed structural validation.

    Carries the list of :class:`~liftedcausal.model.Violation` objects that
    caused the rejection.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid model: {lines}")


class ParseError(LiftedCausalError):
    """Syntax or resolution error in a model file or query string.

    ``line`` and ``column`` are 1-based positions into the source text.
    """

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}" if line else message)


class QueryError(LiftedCausalError):
    """A query is malformed with respect to a given model."""


class SizeLimitError(LiftedCausalError):
    """A grounding or enumeration would exceed the configured size limit."""


class InconsistentEvidenceError(LiftedCausalError):
    """The conditioning event has probability zero."""


class ShatterRequiredError(LiftedCausalError):
    """An operation found overlapping but non-identical instance groups.

    Signals that the caller skipped a required shattering step.
    """
