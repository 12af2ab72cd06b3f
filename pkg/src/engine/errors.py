from typing import Optional


class AlignmentError(Exception):
    """Base class for every error raised by the alignment engine."""


class InputValidationError(AlignmentError, ValueError):
    """Bad input data or configuration. The CLI maps this to exit status 1."""


class PointFileError(InputValidationError):
    """A point or truth file could not be parsed. Carries the 1-based line number."""

    def __init__(self, path: str, message: str, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")


class DegenerateRotationAverageError(AlignmentError, ArithmeticError):
    def __init__(self, message: str = "degenerate rotation average"):
        super().__init__(message)


class EmptyTraceError(AlignmentError, ValueError):
    def __init__(self, message: str = "trace contains no retained samples"):
        super().__init__(message)
