"""Exception types shared across the package."""


class TempsimError(Exception):
    """Base class for errors raised by this package."""


class ObservationParseError(TempsimError):
    """Raised when an observation file cannot be parsed."""


class EmptyNetworkError(TempsimError):
    """Raised when ingestion produces a network with no usable stations."""


class FactorizationError(TempsimError):
    """Raised when a covariance matrix cannot be factorized, even with jitter."""


class FitError(TempsimError):
    """Raised when a model fit fails or its preconditions are not met."""


class ArtifactError(TempsimError):
    """Raised for missing, corrupt, or stale pipeline artifacts."""


class ConfigError(TempsimError):
    """Raised for unreadable or inconsistent run configuration."""
