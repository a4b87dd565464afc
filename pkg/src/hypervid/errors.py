"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ArgumentError(ValueError):
    """An argument value is outside its documented range."""


class DomainError(ValueError):
    """A mathematical input lies outside the operation's domain."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite or degenerate value."""


class FormatError(ValueError):
    """A serialized artifact is malformed; carries the failing byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
