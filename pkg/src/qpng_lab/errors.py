"""Exception types shared by the numerical modules."""


class QpngError(Exception):
    """Base class for errors raised by this package."""


class DomainError(QpngError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class RangeError(QpngError, ValueError):
    """Argument outside the range the implementation supports."""


class InputError(QpngError, ValueError):
    """Malformed structured input (partitions, shapes, words)."""


class AccuracyError(QpngError, RuntimeError):
    """A numerical procedure could not certify its accuracy target.

    ``partial`` carries the best value obtained and ``diagnostics`` a dict
    describing what went wrong.
    """

    def __init__(self, message, partial=None, diagnostics=None):
        super().__init__(message)
        self.partial = partial
        self.diagnostics = diagnostics or {}


class SolverError(QpngError, RuntimeError):
    """Root finding or matching solve failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
