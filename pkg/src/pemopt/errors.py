"""Exception hierarchy shared by every module."""


class PemError(Exception):
    """Base class for all errors raised by pemopt."""


class ShapeError(PemError, ValueError):
    pass


class InvalidPoint(PemError, ValueError):
    pass


class BaseMismatch(PemError, ValueError):
    pass


class DegenerateRetraction(PemError, ArithmeticError):
    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class DegenerateInput(PemError, ValueError):
    pass


class DegeneratePlane(PemError, ValueError):
    pass


class Unsupported(PemError, NotImplementedError):
    pass


class EmptyProduct(PemError, ValueError):
    pass


class TooManyGroups(PemError, ValueError):
    pass


class InvalidPartition(PemError, ValueError):
    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class NonFiniteGradient(PemError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(PemError, ValueError):
    pass


class CheckpointError(PemError):
    pass


class UnsupportedVersion(CheckpointError):
    pass
