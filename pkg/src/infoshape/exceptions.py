"""Exception hierarchy shared by every infoshape module."""


class InfoShapeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(InfoShapeError, ValueError):
    """Invalid hyperparameters, shapes, or architecture choices."""


class UsageError(InfoShapeError, ValueError):
    """A function was called with arguments that violate its contract."""


class TrainingError(InfoShapeError, RuntimeError):
    """Numerical failure during optimisation.

    ``diagnostics`` carries whatever context was available when the failure
    was detected (iteration, offending values, partial records).
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class DivergenceError(TrainingError):
    """An MI estimate left the finite / plausible range."""

    @property
    def trace(self):
        return self.diagnostics.get("trace")


class DatasetFormatError(InfoShapeError, ValueError):
    """A dataset, checkpoint, or config file could not be parsed."""


class IdxParseError(DatasetFormatError):
    """Base class for IDX (MNIST) parsing failures."""


class IdxMagicError(IdxParseError):
    pass


class IdxTruncatedError(IdxParseError):
    pass


class IdxCountMismatchError(IdxParseError):
    pass
