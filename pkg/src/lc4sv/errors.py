"""Exception types shared across the package."""


class Lc4svError(Exception):
    pass


class ConfigurationError(Lc4svError, ValueError):
    """Bad configuration, missing prerequisite artifact, or unusable corpus."""


class ShapeError(Lc4svError, ValueError):
    pass


class DomainError(Lc4svError, ValueError):
    pass


class DegenerateInputError(Lc4svError, ValueError):
    """Input is valid in shape but carries no usable signal (silence, zero norm)."""


class FormatError(Lc4svError, ValueError):
    pass


class FrozenParameterError(Lc4svError, RuntimeError):
    """Raised when an optimizer is asked to update a frozen model.

    This is an internal invariant violation, never a recoverable condition.
    """
