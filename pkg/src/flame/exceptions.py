"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid model, basis, sampler or run configuration."""


class ExtrapolationError(ValueError):
    """A duration fell outside the spline domain.

    ``index`` is the position of the offending value in the input sequence,
    when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DataError(ValueError):
    """Malformed dataset or input file. ``row`` is 1-based when set."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SamplerError(RuntimeError):
    """The sampler could not start or proceed."""


class StaleDrawsError(RuntimeError):
    """Persisted draws were produced under a different model configuration."""
