"""Exception types shared across the package."""


class RobustPGError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(RobustPGError, ValueError):
    pass


class BranchAmbiguityError(InvalidArgumentError):
    """Rotation angle too close to pi for a unique logarithm."""


class KeyNotFoundError(RobustPGError, KeyError):
    pass


class ConfigurationError(RobustPGError, ValueError):
    pass


class NumericalFailureError(RobustPGError, ArithmeticError):
    pass


class TopologyError(RobustPGError, ValueError):
    """Keys are not connected by the odometry chain."""


class InvalidStreamError(RobustPGError, ValueError):
    pass


class OutOfRangeError(RobustPGError, ValueError):
    pass


class ParseError(RobustPGError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
