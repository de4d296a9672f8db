"""Exception hierarchy shared by all services; the CLI maps these to exit codes."""


class PauliLabError(Exception):
    """Base class for lab errors"""
    exit_code = 1


class ScenarioError(PauliLabError):
    """Scenario file does not match the schema"""
    exit_code = 1

    def __init__(self, message: str, field: str = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class PreconditionError(PauliLabError):
    """An operation was called outside its domain"""
    exit_code = 2


class SingularityError(PreconditionError):
    """Evaluation requested at a logarithmic singularity"""

    def __init__(self, message: str = "evaluation at singularity"):
        super().__init__(message)


class ConvergenceError(PauliLabError):
    """A numerical iteration did not reach its tolerance"""
    exit_code = 3

    def __init__(self, message: str, residual: float = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
