"""Exception hierarchy shared across the package.

Each class carries an ``exit_code`` so the command line front-end can map a
failure to a distinct process status without string matching.
"""


class MotionUdfError(Exception):
    exit_code = 1


class ValidationError(MotionUdfError, ValueError):
    """An input violates a documented invariant."""

    exit_code = 5


class FormatError(MotionUdfError, ValueError):
    """A file could not be parsed or has the wrong version/shape."""

    exit_code = 6

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateRotationError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class SegmentLengthError(ValidationError):
    """A sequence is shorter than the segment/window length it is used with."""


class NotEnoughPointsError(ValidationError):
    pass


class CheckpointError(FormatError):
    pass


class NumericalError(MotionUdfError, ArithmeticError):
    """Optimization or training produced a non-finite value."""

    exit_code = 7


class ConfigError(MotionUdfError, ValueError):
    exit_code = 3


class DriftError(MotionUdfError):
    exit_code = 8


class MissingInputError(MotionUdfError, FileNotFoundError):
    exit_code = 4


class OutputExistsError(MotionUdfError, FileExistsError):
    """Run outputs are write-once; the target file is already there."""

    exit_code = 9
