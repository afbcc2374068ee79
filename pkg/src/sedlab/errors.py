"""Exception types shared across the package."""


class SedlabError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(SedlabError, ValueError):
    pass


class GeometryError(SedlabError):
    pass


class DegenerateGeometryError(GeometryError):
    pass


class PreconditionError(SedlabError, ValueError):
    pass


class UndefinedStatisticError(SedlabError):
    pass


class ResourceError(SedlabError):
    pass


class BudgetExceededError(SedlabError):
    """Raised when a generation budget runs out; ``partial`` holds the unsaturated result."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NonConvergenceError(SedlabError):
    """CG hit its iteration cap; ``result`` carries the last iterate and residual."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class EnsembleError(SedlabError):
    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed
