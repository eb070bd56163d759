"""Exception hierarchy.

Validation problems (bad parameters, malformed inputs) derive from
``ValidationError``; failures of the numerics themselves derive from
``NumericalError``. The CLI maps the two families onto exit codes 2 and 3.
"""


class DfreezeError(Exception):
    """Base class for all package errors."""


class ValidationError(DfreezeError, ValueError):
    """Invalid parameters or inputs."""


class NumericalError(DfreezeError, ArithmeticError):
    """A numerical procedure failed or produced an untrustworthy result."""


class SpectrumError(NumericalError):
    pass


class SteadyStateError(NumericalError):
    pass


class StepSizeError(NumericalError):
    """Time step too coarse for the requested accuracy contract."""


class TrajectoryError(NumericalError):
    """A trajectory of an ensemble failed; carries its index."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"trajectory {index} failed: {cause}")
