"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible or invalid."""


class DomainError(ValueError):
    """Value outside the mathematical domain of an operation (log of a
    non-positive number, cosine of a zero vector, ...)."""


class DataError(ValueError):
    """A corpus, batch or trial list cannot satisfy a request."""


class FormatError(ValueError):
    """A serialized file is malformed.  Carries the byte offset at which
    the problem was detected when that is known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(RuntimeError):
    """Optimization failed (non-finite loss or gradient)."""
