"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 2, data-file
problems exit 3, and numeric or model failures exit 1.
"""


class SplinthError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(SplinthError, ValueError):
    """An argument violates a documented precondition."""


class UnsupportedError(ArgumentError):
    """The operation is not defined for the given family or basis kind."""


class DataError(SplinthError):
    """An input data file is malformed; message carries the location."""


class NumericError(SplinthError):
    """A numeric computation failed (eigensolver, singularity, divergence)."""


class RankError(NumericError):
    """A constraint or hypothesis matrix is rank deficient at the design."""


class SolverError(NumericError):
    """Newton iteration did not converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
