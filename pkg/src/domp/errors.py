"""Exception types raised across the package."""


class DompError(Exception):
    """Base class for all package errors."""


class DomainError(DompError, ValueError):
    """An argument lies outside the domain of an operation."""


class DegenerateInputError(DomainError):
    """Inputs are valid in type but make the computation ill-defined."""


class SingularityError(DompError, ArithmeticError):
    """A least-squares subproblem is rank deficient."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ScenarioError(DompError, RuntimeError):
    """A random scenario could not be generated under its constraints."""
