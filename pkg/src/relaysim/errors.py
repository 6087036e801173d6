"""Exception types raised across the package."""


class RelaySimError(Exception):
    """Base class for all package errors."""


class ParameterError(RelaySimError, ValueError):
    """An argument violates an operation's preconditions."""


class CapacityError(RelaySimError, RuntimeError):
    """An exhaustive search would exceed its configured budget."""


class ComputationError(RelaySimError, ArithmeticError):
    """Numerical evaluation failed (non-finite input or factorization error)."""


class EstimationError(RelaySimError, ValueError):
    """Not enough usable data to fit a diversity slope."""


class MergeError(RelaySimError, ValueError):
    """Partial results cannot be combined."""


class RunCancelled(RelaySimError):
    """A simulation was cancelled between work blocks."""

    def __init__(self, partial=None):
        super().__init__("simulation cancelled")
        self.partial = partial
