"""Exception hierarchy shared by all pipeline stages."""


class RcError(Exception):
    """Base class for every error raised by this package."""


class InvalidSparsityError(RcError, ValueError):
    pass


class NonFiniteStateError(RcError, FloatingPointError):
    pass


class EmptyTraceError(RcError, ValueError):
    pass


class IllConditionedError(RcError, ValueError):
    pass


class UntrainedError(RcError, RuntimeError):
    pass


class EmptyDatasetError(RcError, ValueError):
    pass


class DivergenceError(RcError, ArithmeticError):
    pass


class DatasetFormatError(RcError, ValueError):
    pass


class SearchSpaceError(RcError, ValueError):
    pass


class QuantizationError(RcError, ValueError):
    pass


class AccumulatorOverflowError(RcError, OverflowError):
    """Integer accumulator exceeded its declared width (a construction bug)."""


class ThresholdError(RcError, RuntimeError):
    """Derived activation thresholds are not strictly increasing."""


class CalibrationError(RcError, ValueError):
    pass


class ConvergenceError(RcError, RuntimeError):
    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class NetlistError(RcError, RuntimeError):
    pass


class WidthViolationError(NetlistError):
    def __init__(self, node, value, width):
        super().__init__(f"node {node}: value {value} does not fit in {width} bits")
        self.node = node


class VerilogCheckError(RcError, ValueError):
    pass


class ConfigError(RcError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class MissingArtifactError(RcError, FileNotFoundError):
    pass
