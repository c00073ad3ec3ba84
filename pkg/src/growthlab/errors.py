"""Exception types shared across the package."""


class GrowthLabError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(GrowthLabError):
    """A parameter is outside its admissible range."""


class InsufficientDataError(GrowthLabError):
    """Not enough observations to perform the requested estimation."""


class DegenerateFitError(GrowthLabError):
    """The regression design is singular (e.g. constant history)."""


class DivergentSumError(GrowthLabError):
    """A discounted infinite sum does not converge."""


class NonConvergentPricingError(GrowthLabError):
    """Present-value pricing violates its convergence condition."""


class InsufficientTailDataError(GrowthLabError):
    """Too few observations beyond the tail cutoff."""


class SmoothingError(GrowthLabError):
    """Local regression failed even after bandwidth widening."""


class ConfigError(GrowthLabError):
    """Malformed or unknown experiment configuration."""


class DataError(GrowthLabError):
    """External input data failed validation."""
