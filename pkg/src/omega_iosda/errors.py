"""Exception hierarchy shared across the package."""


class IOSDAError(Exception):
    """Base class for all package errors."""


class InvalidArgument(IOSDAError, ValueError):
    pass


class DegenerateInput(InvalidArgument):
    pass


class InvalidLabel(InvalidArgument):
    pass


class InvalidBatch(InvalidArgument):
    pass


class StateError(IOSDAError, RuntimeError):
    pass


class OracleFailure(IOSDAError, ArithmeticError):
    pass


class GenerationError(IOSDAError):
    pass


class ParseError(IOSDAError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionError(ParseError):
    pass


class MetricUndefined(IOSDAError, ValueError):
    pass


class NumericFailure(IOSDAError, FloatingPointError):
    """Raised when a training loss turns non-finite."""

    def __init__(self, message, batch_indices=None):
        super().__init__(message)
        self.batch_indices = batch_indices


class ConfigError(IOSDAError, ValueError):
    pass
