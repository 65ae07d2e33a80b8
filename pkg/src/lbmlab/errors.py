"""Exception hierarchy shared by all lbmlab modules."""


class LbmLabError(Exception):
    """Base class for every error raised by lbmlab."""


class InvalidParameter(LbmLabError, ValueError):
    pass


class QuadratureFailure(LbmLabError, ArithmeticError):
    pass


class SingularArgument(LbmLabError, ValueError):
    pass


class IndexOutOfRange(LbmLabError, IndexError):
    pass


class GridTooLarge(LbmLabError, ValueError):
    pass


class CovarianceNotPSD(LbmLabError, ArithmeticError):
    pass


class OutOfDomain(LbmLabError, ValueError):
    pass


class UnknownPreset(LbmLabError, KeyError):
    pass


class HorizonExceeded(LbmLabError, ValueError):
    pass


class NotSymmetric(LbmLabError, ValueError):
    pass


class IndefiniteMatrix(LbmLabError, ArithmeticError):
    pass


class RhoFloorViolation(LbmLabError, ArithmeticError):
    pass


class ParseError(LbmLabError, ValueError):
    """Configuration error tied to a dotted key path such as ``field.gamma``."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")
