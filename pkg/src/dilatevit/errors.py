"""Exception types shared across the library.

Every raise in the package uses one of these so callers (and the CLI)
can distinguish bad shapes from bad configs from broken files.
"""


class DilateVitError(Exception):
    """Base class for all library errors."""


class ShapeError(DilateVitError, ValueError):
    """Operand shapes are incompatible; the message carries both shapes."""


class ConfigError(DilateVitError, ValueError):
    """A configuration object violates one of its invariants."""


class ContractError(DilateVitError, ValueError):
    """An operation was called outside its documented preconditions."""


class NumericError(DilateVitError, ValueError):
    """Non-finite or otherwise unusable numeric input."""


class FormatError(DilateVitError, ValueError):
    """A serialized file is malformed.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(DilateVitError, ValueError):
    """Runtime data (e.g. an ingested attention map) failed validation."""


class DeterminismError(DilateVitError, RuntimeError):
    """Two evaluations of a supposedly deterministic function disagreed."""
