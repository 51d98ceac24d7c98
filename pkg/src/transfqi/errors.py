"""Exception hierarchy shared by the library and the CLI."""


class TransFQIError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(TransFQIError, ValueError):
    """Bad input: invalid distributions, shapes, configs or files."""


class DimensionError(ValidationError):
    """Objects that must agree in shape or discount factor do not."""


class DomainError(ValidationError):
    """A basis was evaluated outside [-1, 1]."""


class SolverError(TransFQIError, RuntimeError):
    """A numerical routine failed to produce a trustworthy answer."""


class ConvergenceError(SolverError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FactorizationError(SolverError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition
