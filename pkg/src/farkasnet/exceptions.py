"""Exception types raised across the package."""


class FarkasError(Exception):
    """Base class for all package errors."""


class DimensionError(FarkasError, ValueError):
    """Operand shapes do not agree."""


class InputError(FarkasError, ValueError):
    """Input values are outside the accepted domain (labels, non-finite data)."""


class UsageError(FarkasError, RuntimeError):
    """An API was called in a state or mode it does not support."""


class ConstructionError(FarkasError, ValueError):
    """A Farkas layer or simplex vector cannot be built with the given sizes."""


class SpecError(FarkasError, ValueError):
    """A network or init specification is invalid."""


class FormatError(FarkasError, ValueError):
    """A file on disk does not match its expected layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DatasetError(FormatError):
    """A dataset file is empty or malformed."""
