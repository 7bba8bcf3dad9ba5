"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A call violated a documented precondition."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity reached an op that refuses to propagate it."""


class ConfigError(ValueError):
    """Invalid configuration key, value or insertion plan."""


class ParseError(ValueError):
    """Malformed input file. ``lineno`` is 1-based, or None for whole-file errors."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)
