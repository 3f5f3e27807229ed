"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: validation problems exit 1, file
format / I-O problems exit 2, numerical failures exit 3.
"""


class DatScoreError(Exception):
    """Base class for all package errors."""


class ValidationError(DatScoreError, ValueError):
    """Input violates a documented precondition or invariant."""


class DataFormatError(DatScoreError, IOError):
    """A file does not conform to its declared on-disk format."""


class TruncationError(DataFormatError):
    """A binary file is shorter or longer than its header implies."""


class NumericalError(DatScoreError, ArithmeticError):
    """A numerical routine failed (singular system, underflow guard, ...)."""
