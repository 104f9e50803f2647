"""Exception types raised across the package."""


class NercoError(Exception):
    """Base class for all package errors."""


class ImageFormatError(NercoError, ValueError):
    """A file could not be decoded as an image."""


class DataError(NercoError, ValueError):
    """A corpus or image does not satisfy the data contract."""


class NumericFault(NercoError, FloatingPointError):
    """A tensor or scalar became non-finite.

    ``name`` identifies the offending tensor or loss term.
    """

    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"non-finite values in {name!r}")


class CompatibilityError(NercoError):
    """A checkpoint does not match the requested configuration."""


class ConfigurationError(NercoError):
    """A required resource or configuration entry is missing."""
