"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration/usage problems
exit with 1, data problems with 2, numerical failures with 3.
"""

from __future__ import annotations


class SnowballError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SnowballError):
    """Invalid configuration value, incompatible shapes, or bad usage."""


class DataError(SnowballError):
    """Problem with a dataset: parse failures, impossible splits, bad labels."""


class DiscoveryError(SnowballError):
    """Discovery cannot proceed, e.g. a class with no labelled representatives."""


class OrchestrationError(SnowballError):
    """A pipeline step received inputs that violate the run contract."""


class NumericsError(SnowballError):
    """Non-finite values produced during a forward pass."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class DivergenceError(SnowballError):
    """Training produced non-finite losses or parameters."""

    def __init__(self, message: str, step: int, generation: int | None = None,
                 iteration: int | None = None):
        super().__init__(message)
        self.step = step
        self.generation = generation
        self.iteration = iteration


class AggregationError(SnowballError):
    """Run records cannot be aggregated (mismatched configs or grids)."""
