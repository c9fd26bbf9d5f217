"""Exception hierarchy shared by every solver stage.

Each class carries the exit code the command line maps it to, so a failing
verdict deep inside a pipeline surfaces as a distinct process status.
"""


class SolverError(Exception):
    exit_code = 10


class ConfigError(SolverError):
    exit_code = 2


class RangeViolation(SolverError):
    """A constitutive argument fell outside the model's validity range."""

    exit_code = 11

    def __init__(self, message, index=None, value=None):
        super().__init__(message)
        self.index = index
        self.value = value


class EllipticityError(SolverError):
    """The scanned ellipticity constant is not positive."""

    exit_code = 12

    def __init__(self, message, s=None, r=None, value=None):
        super().__init__(message)
        self.s = s
        self.r = r
        self.value = value


class SigmaViolation(SolverError):
    exit_code = 13

    def __init__(self, message, t=None, observed=None):
        super().__init__(message)
        self.t = t
        self.observed = observed


class ConvergenceError(SolverError):
    """Picard, inverse-map or fixed-point iteration failed to converge."""

    exit_code = 14


class NonContractionError(SolverError):
    exit_code = 15

    def __init__(self, message, ratios=None):
        super().__init__(message)
        self.ratios = ratios


class SingularSymbolError(SolverError):
    exit_code = 16

    def __init__(self, message, xi=None, lam=None, cond=None):
        super().__init__(message)
        self.xi = xi
        self.lam = lam
        self.cond = cond


class DensityError(SolverError):
    exit_code = 17


class InstabilityError(SolverError):
    exit_code = 18


class VerdictFailure(SolverError):
    """A verification run finished but one of its checks did not pass."""

    exit_code = 20


class SingularJacobianError(SolverError):
    exit_code = 19
