"""Exception hierarchy shared by every stage of the pipeline."""


class GridLevelsError(Exception):
    """Base class; ``stage`` is filled in by the scenario runner."""

    stage = None


class ConfigError(GridLevelsError, ValueError):
    pass


class DimensionError(GridLevelsError, ValueError):
    pass


class DomainError(GridLevelsError, ValueError):
    """A voltage left the open positive half-line."""


class RangeError(GridLevelsError, ValueError):
    pass


class ConvergenceError(GridLevelsError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class AssumptionViolation(GridLevelsError, RuntimeError):
    pass


class StructureError(GridLevelsError, ValueError):
    """Stabilizability/detectability (or block structure) does not hold."""


class IterationError(GridLevelsError, RuntimeError):
    pass


class StabilityError(GridLevelsError, RuntimeError):
    pass


class NumericalError(GridLevelsError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
