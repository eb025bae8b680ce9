"""Exception hierarchy shared by every layer of the package."""

from __future__ import annotations


class DcircError(Exception):
    """Base class for all errors raised by dcirc."""


class DiagramError(DcircError, ValueError):
    """Raised when a diagram document cannot be turned into a valid diagram."""


class ParseError(DiagramError):
    """Malformed document: bad JSON or a missing/mistyped field.

    ``locus`` is a human readable position such as ``line 4 column 7`` or
    ``nodes[2].cpt[1]``.
    """

    def __init__(self, message: str, locus: str | None = None):
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus else message)


class ValidationError(DiagramError):
    """Structurally well formed document that violates a diagram invariant."""

    def __init__(self, message: str, node: str | None = None, invariant: str | None = None):
        self.node = node
        self.invariant = invariant
        prefix = f"[{invariant}] " if invariant else ""
        where = f"node {node!r}: " if node else ""
        super().__init__(f"{prefix}{where}{message}")


class NormalizationError(DiagramError):
    """The utility function cannot map the value table into (0, 1)."""


class AnalysisError(DcircError):
    """An analysis was requested whose precondition does not hold."""


class UnavailableAlternativeError(AnalysisError):
    pass


class UndefinedConditionalError(AnalysisError):
    pass


class UnsupportedParameterError(AnalysisError):
    pass


class CapExceededError(AnalysisError):
    pass


class ConvergenceError(AnalysisError):
    def __init__(self, message: str, residuals: dict | None = None):
        self.residuals = residuals or {}
        super().__init__(message)
