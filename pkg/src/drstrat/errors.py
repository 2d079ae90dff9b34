"""Exception hierarchy.

Everything raised on purpose by the package derives from ``DrStratError`` so
callers (and the CLI) can separate modelling errors from programming bugs.
"""


class DrStratError(Exception):
    """Base class for all package errors."""


class ValidationError(DrStratError, ValueError):
    """Invalid input or configuration."""


class NumericalError(DrStratError, ArithmeticError):
    """A numerical routine failed to produce a usable result."""


# discrete distributions
class GridMismatch(ValidationError):
    pass


class PmfNormalizationError(ValidationError):
    pass


class StratumZeroProbability(ValidationError):
    def __init__(self, stratum: int, mass: float):
        super().__init__(f"stratum {stratum} has probability {mass:.3g} <= 0")
        self.stratum = stratum
        self.mass = mass


class NonIntegerPreimage(ValidationError):
    pass


class NonPositiveDensityArgument(ValidationError):
    pass


# estimators
class EmptyBatch(ValidationError):
    pass


class EmptyStratum(ValidationError):
    pass


class AllZeroProducts(ValidationError):
    pass


class SupportViolation(ValidationError):
    pass


class ZeroBudgetStratum(ValidationError):
    pass


class InfeasibleBudget(ValidationError):
    pass


# solvers
class ProjectionDidNotConverge(NumericalError):
    pass


class NoStartConverged(NumericalError):
    pass


class GridTooLarge(ValidationError):
    pass


class InnerSolverFailure(NumericalError):
    pass


class GPFitFailure(NumericalError):
    pass


class ConfigError(ValidationError):
    """Experiment configuration could not be parsed or validated."""
