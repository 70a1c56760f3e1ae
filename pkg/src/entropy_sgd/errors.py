"""Exception hierarchy shared by the library and the CLI."""


class EntropySgdError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(EntropySgdError, ValueError):
    """A caller passed an argument outside its documented domain."""


class FormatError(EntropySgdError, ValueError):
    """A data file does not follow the expected binary or text layout."""


class ConsistencyError(EntropySgdError, ValueError):
    """Two inputs that must agree (e.g. image and label files) do not."""


class NumericError(EntropySgdError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class DivergenceError(NumericError):
    """An iterative method produced non-finite parameters."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ResourceError(EntropySgdError):
    """A request exceeds a configured size cap."""


class GridCoverageError(NumericError):
    """A quadrature grid misses a non-negligible part of the integrand."""


class CalibrationError(EntropySgdError):
    """No scope value in the search range satisfies the calibration band."""

    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve or []


class ConfigError(EntropySgdError, ValueError):
    """An experiment configuration failed schema validation."""

    def __init__(self, message, keys=None):
        super().__init__(message)
        self.keys = list(keys or [])
