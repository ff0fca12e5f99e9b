"""Exception types raised across the package.

The CLI maps these onto process exit codes (see ``hetoffload.cli``).
"""

from sklearn.exceptions import NotFittedError


class ConfigError(ValueError):
    """Invalid or incompatible experiment configuration."""


class DataFormatError(ValueError):
    """Input file could not be interpreted (too many malformed rows, etc.)."""


class HorizonError(ValueError):
    """A forecast was requested outside the available history/future."""


class TrainingDivergenceError(RuntimeError):
    """A gradient step produced a non-finite loss."""


class EmptyMemoryError(RuntimeError):
    """Sampling was attempted from an empty replay memory."""


__all__ = [
    "ConfigError",
    "DataFormatError",
    "EmptyMemoryError",
    "HorizonError",
    "NotFittedError",
    "TrainingDivergenceError",
]
