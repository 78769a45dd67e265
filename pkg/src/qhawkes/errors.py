"""Exception types shared across the package."""


class QhawkesError(Exception):
    """Base class for package errors."""


class ConfigError(QhawkesError):
    """Invalid configuration: unknown keys, bad values, unusable parameter sets."""


class NumericalError(QhawkesError):
    """A numerical procedure failed: no convergence, insufficient data, degenerate input."""
