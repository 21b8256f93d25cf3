"""Exception types shared across the package."""


class RingsumError(Exception):
    """Base class for all package errors."""


class OutOfExtentError(RingsumError, ValueError):
    """A coordinate falls outside the configured grid extent."""


class InvalidSpecError(RingsumError, ValueError):
    """A grid or ring configuration violates its preconditions."""


class FitError(RingsumError):
    """Model fitting failed (no candidates or a non-finite objective)."""


class NotMonitoredError(RingsumError, KeyError):
    """A query referenced a term that has no summary."""


class ParseError(RingsumError, ValueError):
    """A stream record could not be parsed."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class SnapshotError(RingsumError):
    """A snapshot file is missing, truncated, or has the wrong format."""
