"""Exception types raised across the package."""


class EvMotionError(Exception):
    """Base class for all package errors."""


class ValidationError(EvMotionError, ValueError):
    """An input violates a documented precondition or invariant."""


class SizeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class NonMonotonicTime(ValidationError):
    pass


class EmptyCloud(ValidationError):
    pass


class NoViews(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class TooSmall(ValidationError):
    pass


class InputMismatch(ValidationError):
    pass


class BehindCamera(EvMotionError, ValueError):
    """Point lies at or behind the camera near plane."""


class SingularInnovation(EvMotionError, ArithmeticError):
    """Innovation covariance is numerically singular."""


class NoForeground(EvMotionError, ValueError):
    """A frame has no pixel above the foreground threshold."""


class Diverged(EvMotionError, ArithmeticError):
    """An optimization produced a non-finite loss."""
