"""Contains different exceptions that can happen during operation."""


class UsageError(Exception):
    """Bad command-line usage or bad settings."""
    pass


class ConfigurationError(UsageError):
    """Invalid training config or infeasible grid."""
    pass


class ParameterError(UsageError):
    """A function argument is out of its allowed range."""
    pass


class DataError(Exception):
    """Input data cannot be used."""
    pass


class ParseError(DataError):
    """Malformed line in a triple file."""

    def __init__(self, path, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class VocabularyError(DataError):
    """Unknown entity or relation name, or id out of bounds."""
    pass


class DimensionError(DataError):
    """Array shapes or dimensions that do not fit together."""
    pass


class CheckpointError(DataError):
    """Unreadable, corrupt or mismatched checkpoint file."""
    pass


class FeatureFileError(DataError):
    """Unreadable or corrupt engineered feature file."""
    pass


class EmptyReportError(DataError):
    """Metric requested on an empty rank report."""
    pass


class NumericalFailure(Exception):
    """NaN/Inf values during training."""
    pass


class StaleCacheError(NumericalFailure):
    """Forward cache no longer matches the parameters."""
    pass
