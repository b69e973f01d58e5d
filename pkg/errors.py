"""Exception hierarchy for the surface Stokes solver.

Every error carries an ``exit_code`` used by the command line: 2 for invalid
input or configuration, 3 for numerical or solver breakdown.
"""


class SurfStokesError(Exception):
    exit_code = 1


class ValidationError(SurfStokesError, ValueError):
    exit_code = 2


class SolverError(SurfStokesError, ArithmeticError):
    exit_code = 3


class ConfigError(ValidationError):
    pass


class DegenerateGradient(SolverError):
    """Level-set gradient vanishes where a normal is needed."""


class NoConvergence(SolverError, RuntimeError):
    """Iterative procedure left its tolerance unmet after max_iter steps."""


class DegenerateMesh(ValidationError):
    pass


class ManifoldError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DegenerateJacobian(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class ResidualTooLarge(SolverError):
    pass


class NotSimplyConnected(ValidationError):
    pass


class VortexNotFound(SolverError):
    pass


class DegenerateInput(ValidationError):
    pass


class InvalidOrder(ValidationError):
    pass


class InvalidMesh(ValidationError):
    pass
