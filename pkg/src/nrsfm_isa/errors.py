"""Exception and warning classes shared by all pipeline stages."""


class NrsfmError(Exception):
    """Base class for all errors raised by this package."""

    #: process exit code used by the command line interface
    exit_code = 4


class InputError(NrsfmError, ValueError):
    """Malformed or non-finite input data."""

    exit_code = 2


class ConfigError(NrsfmError, ValueError):
    """Invalid dimensions or configuration (e.g. 3K larger than the data rank)."""

    exit_code = 3


class PreconditionError(NrsfmError, ValueError):
    """An operation was called on data violating its stated precondition."""

    exit_code = 3


class NumericalError(NrsfmError, ArithmeticError):
    """A numerical stage failed."""

    exit_code = 4


class SingularAffinityError(NumericalError):
    """A subspace affinity D_k cannot be inverted."""

    def __init__(self, k, condition):
        self.k = k
        self.condition = condition
        super().__init__(
            f"subspace affinity D_{k} is singular (condition estimate {condition:.3g})"
        )


class DegeneracyWarning(UserWarning):
    """Data is rank deficient; the stage proceeded with a reduced rank."""


class ConvergenceWarning(UserWarning):
    """An iterative stage stopped at its iteration limit."""
