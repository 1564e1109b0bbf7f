"""Exception and warning types shared across the package."""


class RwpotError(Exception):
    """Base class for all errors raised by rwpot."""


class ValidationError(RwpotError):
    """Bad input or configuration (CLI exit code 2)."""


class InvalidSpec(ValidationError):
    pass


class WindowTooSmall(ValidationError):
    pass


class MarginViolation(ValidationError):
    pass


class EmptySet(ValidationError):
    pass


class PreconditionViolated(ValidationError):
    pass


class NotFound(RwpotError):
    pass


class MaxIterExceeded(RwpotError):
    """Iterative solver stopped before reaching the tolerance.

    The partial result is attached as ``result``; it is still a valid lower
    bound for the weighted expectation.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class EmptyTargetSet(RwpotError):
    pass


class UnboundedComponent(RwpotError):
    """A macroscopic island touches the edge of the macro window."""


class NoSpanningCluster(RwpotError):
    pass


class DegenerateNorm(RwpotError):
    pass


class ClippedBoundary(UserWarning):
    """An outer boundary was cut off by the edge of the window."""
