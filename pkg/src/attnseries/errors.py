"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """A layer, model or run was configured with invalid settings."""


class ContractError(RuntimeError):
    """A call violated a precondition of the API (e.g. non-scalar loss)."""


class ParseError(ValueError):
    """A file could not be parsed; ``line`` carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedOperation(RuntimeError):
    """The requested analysis is not available for this architecture."""


class TrainingDiverged(FloatingPointError):
    """The training loss became NaN or infinite."""


class CompatibilityError(ValueError):
    """A checkpoint does not fit the model spec or dataset it is used with."""
