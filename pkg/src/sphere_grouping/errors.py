"""Exception hierarchy.

Input problems derive from ``ValueError`` so callers can treat them as bad
input; numerical failures derive from ``ArithmeticError``.
"""


class SphereGroupingError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SphereGroupingError, ValueError):
    """Invalid caller-supplied data or configuration."""


class ZeroColumn(InputError):
    def __init__(self, column: int, norm: float):
        super().__init__(f"column {column} has norm {norm:.3e}, cannot normalize")
        self.column = column
        self.norm = norm


class NotNormalized(InputError):
    def __init__(self, column: int, norm: float):
        super().__init__(f"column {column} has norm {norm!r}, expected unit length")
        self.column = column
        self.norm = norm


class ShapeMismatch(InputError):
    pass


class InvalidSubset(InputError):
    pass


class VacuousBound(InputError):
    pass


class InvalidMargin(InputError):
    pass


class InfeasiblePlacement(InputError):
    pass


class ConfigError(InputError):
    pass


class MissingCache(SphereGroupingError, RuntimeError):
    pass


class NumericalOverflow(SphereGroupingError, ArithmeticError):
    pass
