"""Exception types raised across the package."""


class MemcalError(Exception):
    """Base class for all package errors."""


class DomainError(MemcalError, ValueError):
    """An argument lies outside the domain of a prior transform."""


class SizeError(MemcalError, ValueError):
    """A combinatorial guard was exceeded."""


class SingularityError(MemcalError):
    """A linear system that must be invertible is (numerically) singular."""


class UnsupportedOperationError(MemcalError):
    """The requested quantity is not available for this design or family."""


class SolverError(MemcalError):
    """An iterative solver failed to converge.

    ``trace`` holds one dict per iteration with the diagnostics that were
    available when the solver gave up.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class InfeasibleError(SolverError):
    """The calibration target cannot be reached inside the prior supports."""

    def __init__(self, message, report=None, trace=None):
        super().__init__(message, trace)
        self.report = report
