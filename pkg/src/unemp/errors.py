"""Exception hierarchy shared by all modules."""


class UnempError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(UnempError, ValueError):
    """Non-finite or otherwise invalid numeric input."""


class SingularEquilibriumError(UnempError, ArithmeticError):
    """The equilibrium denominator vanishes."""


class IntegrationError(UnempError, RuntimeError):
    pass


class StepLimitError(IntegrationError):
    """The integrator used up ``max_steps`` before reaching ``t_end``."""


class BlowUpError(IntegrationError):
    """The right-hand side produced a non-finite value.

    ``last_time`` is the last time at which the state was finite and
    ``partial`` holds the trajectory up to that point (may be None).
    """

    def __init__(self, message, last_time, partial=None):
        super().__init__(message)
        self.last_time = last_time
        self.partial = partial


class DataValidationError(UnempError, ValueError):
    """Input data violates the series schema or a formula's domain."""


class UndefinedCorrelationError(UnempError, ValueError):
    pass


class DegenerateFitError(UnempError, ArithmeticError):
    pass


class FitConvergenceError(UnempError, RuntimeError):
    """Levenberg-Marquardt ran out of iterations; ``best`` holds the best iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InfeasibleProblemError(UnempError, RuntimeError):
    """The OCP solver could not recover feasibility.

    ``where`` names the constraint block and index of the largest violation.
    """

    def __init__(self, message, violation, where, solution=None):
        super().__init__(message)
        self.violation = violation
        self.where = where
        self.solution = solution
