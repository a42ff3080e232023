"""Exception types raised across the package."""


class SegblurError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(SegblurError, ValueError):
    """A scalar or structural parameter is outside its allowed domain."""


class InvalidInputError(SegblurError, ValueError):
    """Image data violates the value range an operation requires."""


class KernelOverflowError(SegblurError, RuntimeError):
    """A trajectory does not fit inside the requested kernel window."""


class ManifestError(SegblurError):
    """A source manifest is malformed or references missing files."""

    def __init__(self, message, problems=()):
        self.problems = list(problems)
        if self.problems:
            message = message + ":\n  " + "\n  ".join(self.problems)
        super().__init__(message)


class ConfigError(SegblurError, ValueError):
    """A generation config is malformed."""
