"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class NotInTheta2Error(ValueError):
    """Parameter violates the second-moment contraction condition."""


class FactorizationError(ArithmeticError):
    """Conditional scatter matrix failed to factorize."""

    def __init__(self, message, theta=None, t=None):
        super().__init__(message)
        self.theta = theta
        self.t = t


class EstimationError(RuntimeError):
    """Optimizer could not produce a usable estimate."""
