"""Exception types shared across the package."""


class StgapError(Exception):
    """Base class for data and format errors raised by this package."""


class FormatError(StgapError):
    """A file violates the grid-stack or model-file contract."""
