"""Exception types. CLI exit codes hang off the three top-level families."""


class ConfigError(ValueError):
    """Invalid run configuration or injection/generator parameters (exit code 2)."""


class DataError(ValueError):
    """Input files that cannot be turned into a valid graph (exit code 3)."""


class ParseError(DataError):
    pass


class RangeError(DataError):
    pass


class GraphShapeError(DataError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss (exit code 4)."""

    def __init__(self, message, last_state=None, epoch=None):
        super().__init__(message)
        self.last_state = last_state
        self.epoch = epoch


class ShapeError(ValueError):
    """Operands of a tensor op have incompatible shapes."""


class BackwardError(RuntimeError):
    pass


class NumericError(ArithmeticError):
    pass


class UnsupportedReportError(RuntimeError):
    pass
