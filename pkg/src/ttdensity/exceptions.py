"""Exception and warning classes raised throughout the package."""


class TTDensityError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(TTDensityError, ValueError):
    pass


class SingularJacobian(TTDensityError, ArithmeticError):
    pass


class NoConvergence(TTDensityError, RuntimeError):
    """An iterative map inversion did not reach its tolerance."""

    def __init__(self, message, max_iter=None, residual=None):
        super().__init__(message)
        self.max_iter = max_iter
        self.residual = residual


class OptimizerFailed(TTDensityError, RuntimeError):
    pass


class HessianNotPD(TTDensityError, ArithmeticError):
    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class OutOfChart(TTDensityError, ValueError):
    pass


class OutsideCoveredRegion(TTDensityError, ValueError):
    pass


class PrecisionLoss(TTDensityError, ArithmeticError):
    pass


class OutOfDomain(TTDensityError, ValueError):
    pass


class IllConditionedSolve(TTDensityError, ArithmeticError):
    def __init__(self, message, sweep=None):
        super().__init__(message)
        self.sweep = sweep


class NonPositiveSurrogate(TTDensityError, ValueError):
    def __init__(self, message, points=None):
        super().__init__(message)
        self.points = points


class NegativeLayerMass(TTDensityError, ArithmeticError):
    def __init__(self, message, layer=None, mass=None):
        super().__init__(message)
        self.layer = layer
        self.mass = mass


class CapExceeded(TTDensityError, ValueError):
    pass


class SolverFailure(TTDensityError, RuntimeError):
    def __init__(self, message, y=None):
        super().__init__(message)
        self.y = y


class DensityEvaluationError(TTDensityError, RuntimeError):
    """A log-density evaluation failed; the offending point is attached."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ConfigError(TTDensityError, ValueError):
    pass


class NotConvergedWarning(UserWarning):
    """ALS stopped at the sweep limit before reaching its target residual."""


class UnderdeterminedFitWarning(UserWarning):
    pass
