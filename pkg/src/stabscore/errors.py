"""Exception types shared across the package."""


class StabscoreError(Exception):
    """Base class for errors raised by this package."""


class RangeError(StabscoreError, ValueError):
    """A coordinate or index falls outside its valid range."""


class GeometryError(StabscoreError, ValueError):
    """A geometric configuration is degenerate or maps through infinity."""


class DomainError(StabscoreError, ValueError):
    """A numeric argument lies outside the mathematical domain of an operation."""


class ImageFormatError(StabscoreError, ValueError):
    """An image file is unreadable or uses an unsupported encoding."""
