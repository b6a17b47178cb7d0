"""Exception hierarchy shared by all modules."""


class IndexOneError(Exception):
    """Base class for library errors."""


class EvaluationError(IndexOneError):
    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class SingularMatrixError(IndexOneError):
    def __init__(self, pivot):
        super().__init__(f"matrix is singular to working precision (smallest pivot {pivot:.3e})")
        self.pivot = pivot


class RankDeficiencyError(IndexOneError):
    """Constraint fields are not linearly independent at the given point."""


class IndexViolationError(IndexOneError):
    """The multiplier equations cannot be solved (index-1 assumption fails)."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class StepFailureError(IndexOneError):
    """Newton iteration for the stage equations did not converge."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class ProjectionError(IndexOneError):
    """A RATTLE multiplier projection failed."""


class ConfigError(IndexOneError):
    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
