"""Exception hierarchy.

Validation errors (bad inputs, violated preconditions) derive from
``ValidationError``; numeric breakdowns derive from ``NumericFailure``.
The CLI maps the two families to exit codes 2 and 3.
"""


class SmoothMLEError(Exception):
    """Base class for all package errors."""


class ValidationError(SmoothMLEError, ValueError):
    pass


class NumericFailure(SmoothMLEError, ArithmeticError):
    pass


class InvalidDistribution(ValidationError):
    pass


class InvalidFixture(ValidationError):
    pass


class InvalidProbability(ValidationError):
    pass


class InvalidRadius(ValidationError):
    pass


class AtomDensityUndefined(ValidationError):
    """A Dirac atom has no finite density; only its smoothed version does."""


class OffsetTooLarge(ValidationError):
    pass


class SampleSizeTooSmall(ValidationError):
    pass


class ShiftZero(ValidationError):
    pass


class QuadratureFailure(NumericFailure):
    pass


class NoFeasibleSmoothing(NumericFailure):
    def __init__(self, message, failed=None):
        super().__init__(message)
        self.failed = failed or []


class NoRootInInterval(NumericFailure):
    """No sign change of the empirical score was found.

    ``result`` carries the flagged fallback estimate (argmin of ``|score|``).
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
