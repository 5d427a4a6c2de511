"""Exception types shared across the package."""


class BevkitError(ValueError):
    """Base class for all errors raised by this package."""


class MalformedInputError(BevkitError):
    """Raised when external data (files, byte streams, config text) cannot be parsed."""


class ParameterError(BevkitError):
    """Raised when an argument violates an operation's contract."""


class DegenerateGeometryError(BevkitError):
    """Raised when geometry collapses (collinear corners, zero-height boxes, ...)."""


class DegenerateOrientationError(DegenerateGeometryError):
    """Raised when an orientation vector is too close to zero to define an angle."""
