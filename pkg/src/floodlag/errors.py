"""Exception hierarchy shared across the pipeline.

The CLI maps :class:`ValidationError` (and subclasses) to exit code 2 and
:class:`ConvergenceError` to exit code 3.
"""


class ValidationError(ValueError):
    """Input violates a documented schema or invariant."""


class StructuralError(ValidationError):
    """Arrays or tables that must agree in shape do not."""


class ProjectionError(ValidationError):
    """Raster and polygon inputs carry different projection tags."""


class MissingDataError(ValidationError):
    """A required value (meteorology, enrollment, demographics) is absent."""


class ConfigurationError(ValidationError):
    """A model or run configuration cannot be honoured."""


class RankDeficiencyError(ValidationError):
    def __init__(self, columns, message=None):
        self.columns = tuple(columns)
        super().__init__(message or f"design matrix is rank deficient; collinear columns: {', '.join(self.columns)}")


class ConvergenceError(RuntimeError):
    def __init__(self, message, last_iterate=None, n_iter=None, grad_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.n_iter = n_iter
        self.grad_norm = grad_norm
