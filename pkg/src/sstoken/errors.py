"""Exception types raised across the package."""


class SSTokenError(Exception):
    """Base class for package errors."""


class SampleTooLong(SSTokenError):
    pass


class EmptyResponse(SSTokenError):
    pass


class FormatError(SSTokenError):
    pass


class ShapeError(SSTokenError, ValueError):
    pass


class LengthMismatch(SSTokenError, ValueError):
    pass


class DomainError(SSTokenError, ValueError):
    pass


class EmptyMask(SSTokenError, ValueError):
    pass


class NonFiniteGradient(SSTokenError, FloatingPointError):
    pass


class EmptyInput(SSTokenError, ValueError):
    pass
