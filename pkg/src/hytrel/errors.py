"""Exception types shared across the package."""


class HytrelError(Exception):
    """Base class for all package-specific errors."""


class CorpusError(HytrelError):
    """Raised for unreadable, empty, or syntactically bad corpus files."""


class MalformedTableError(HytrelError):
    """Raised when a corpus record cannot yield a valid table."""


class NumericError(HytrelError):
    """Raised when a computation produces non-finite values."""


class CheckpointError(HytrelError):
    """Raised for unreadable or corrupt checkpoint files.

    ``offset`` points at the first byte that failed validation, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset
