"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Raised when arguments violate a documented precondition."""


class ParameterDomainError(ValueError):
    """Raised when a formula is evaluated outside its valid parameter range."""


class InvariantViolation(RuntimeError):
    """Raised when an internal invariant that should be impossible is broken."""


class SolverFailure(RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    residual : float, optional
        Residual (or optimality gap) achieved when the solver gave up.
    step : str, optional
        Name of the solver step that failed, e.g. ``"u-step"``.
    """

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step

    def annotate(self, step):
        """Return a copy of this failure tagged with ``step``."""
        err = SolverFailure(f"{step}: {self}", residual=self.residual, step=step)
        return err
