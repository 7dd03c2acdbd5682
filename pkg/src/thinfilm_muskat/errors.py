"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A run configuration violates a model or scheme constraint."""


class DomainError(ValueError):
    """An input value lies outside the mathematical domain of an operation."""


class ShapeError(ValueError):
    """Fields that must live on the same grid do not."""


class StepFailure(RuntimeError):
    """The inner minimization could not make progress.

    Carries the last iterate and solver diagnostics so a failed run can be
    inspected.
    """

    def __init__(self, message, last_pair=None, diagnostics=None):
        super().__init__(message)
        self.last_pair = last_pair
        self.diagnostics = diagnostics or {}


class LinearSolverError(RuntimeError):
    """The implicit time step produced a singular or unusable linear system."""
