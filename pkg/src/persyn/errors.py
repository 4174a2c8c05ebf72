"""Exception types raised across the package."""


class PersynError(Exception):
    """Base class for all package errors."""


class FormatError(PersynError, ValueError):
    """A file is malformed or uses an unsupported encoding."""


class ShapeError(PersynError, ValueError):
    """Array or image dimensions do not agree."""


class DegenerateSizeError(PersynError, ValueError):
    """An operation would produce (or needs) an image smaller than allowed."""


class DomainError(PersynError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""
