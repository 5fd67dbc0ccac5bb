"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation's shape rule."""


class NumericsError(ArithmeticError):
    """A numeric invariant was violated (NaN/Inf, degenerate power, ...)."""


class DataFormatError(ValueError):
    """A file or wire payload does not match its documented format."""


class ConfigError(ValueError):
    """A run configuration is inconsistent or unresolvable."""
