"""Exception hierarchy shared by all pcat modules."""


class PcatError(Exception):
    """Base class for every error raised by this package."""


class DataError(PcatError):
    """Input data is missing, malformed or insufficient."""


class ConfigError(PcatError):
    """A scenario or parameter set is inconsistent."""


class FormatError(DataError):
    """A file or byte stream does not follow the expected schema."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class OrderingError(DataError):
    """Timestamps are not strictly increasing."""

    def __init__(self, row, previous, current):
        self.row = row
        super().__init__(
            f"row {row}: timestamp {current!r} does not follow {previous!r}"
        )


class DomainError(PcatError, ValueError):
    """An argument lies outside the validity range of an operation."""


class EmptyResultError(DataError):
    """An operation would produce an empty result."""


class IncompatibleError(PcatError):
    """Two objects cannot be combined (e.g. maps with different grids)."""


class PredictionError(PcatError):
    """A prediction could not be made (missing feature, off route, ...)."""


class EstimationError(PcatError):
    """A physical quantity could not be estimated from the given context."""
