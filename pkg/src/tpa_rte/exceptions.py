"""Exception hierarchy shared by the solvers and the command line driver."""


class ParameterError(ValueError):
    """Invalid parameter or configuration value."""


class DomainError(ValueError):
    """A point or ray lies outside the admissible geometry."""


class ValidationError(ValueError):
    """An object violates one of its structural invariants."""


class SubcriticalityError(ValueError):
    """Scattering ratio sup sigma_s / (Sigma_a + sigma_s) is not below one."""


class ConvergenceError(RuntimeError):
    """An iteration hit its iteration cap.

    Attributes
    ----------
    residual : float
        Last measured residual or gap.
    history : list of float
    """

    def __init__(self, message, residual=float("nan"), history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history) if history is not None else []


class DivergenceError(ConvergenceError):
    """The iteration gap grew for too many consecutive steps."""


class DataInconsistencyError(ValueError):
    """Internal data cannot be inverted (for instance every cell masked)."""
