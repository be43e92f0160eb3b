"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """A scalar parameter is outside its admissible range."""


class InvalidInputError(ValueError):
    """A data argument (batch, grid, sample list) is empty or malformed."""


class DomainError(ValueError):
    """An argument is outside the domain where the quantity is defined."""


class DegenerateNullError(InvalidParameterError):
    """Hypothesized risk level sits on the boundary {0, 1}."""


class RegimeError(InvalidParameterError):
    """Tail level and base rate fall outside the supported variance regime."""


class UnboundedDensityError(InvalidParameterError):
    """Beta shape below 1, so the score density has no finite maximum."""


class GuaranteeModeError(ValueError):
    """A weight function without a density was used where a guarantee is required."""


class ConfigError(ValueError):
    """Configuration document failed validation."""
