"""Exception types raised across the package."""


class PreconditionError(ValueError):
    """An argument lies outside the domain of an operation."""


class DegenerateIntervalError(PreconditionError):
    """A transition was requested over an empty time interval."""


class ConfigurationError(ValueError):
    """A model, prior or experiment configuration is invalid."""


class ImpossibleStateError(ArithmeticError):
    """The posterior pinning law has no mass that is representable in floating point."""


class IndeterminateOrderError(ValueError):
    """Two densities have no common support, so their ratio is undefined."""


class ConvergenceError(RuntimeError):
    """Fixed-point iteration did not converge within the allowed iterations."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
