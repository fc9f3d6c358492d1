"""Exception hierarchy shared by all modules."""


class WPModuliError(Exception):
    """Base class for every error raised by wpmoduli."""


class AllGradientsTiny(WPModuliError):
    """The hypersurface gradient (nearly) vanishes: close to a singular fiber."""


class DivisionNearZero(WPModuliError):
    pass


class GradientNormTiny(WPModuliError):
    pass


class NonPositiveH(WPModuliError):
    pass


class NonPositiveInput(NonPositiveH):
    pass


class NonPositiveDrift(NonPositiveH):
    pass


class FactorizationFailed(WPModuliError):
    pass


class DegenerateLine(WPModuliError):
    pass


class RootPolishFailed(WPModuliError):
    pass


class SingularPullback(WPModuliError):
    pass


class EpsilonOutOfRange(WPModuliError):
    pass


class EmptyCloud(WPModuliError):
    pass


class NonHermitianResult(WPModuliError):
    pass


class SingularDesign(WPModuliError):
    pass


class DenominatorUnderflow(WPModuliError):
    pass


class MaxIterExceeded(WPModuliError):
    """Iteration budget exhausted; ``residual`` holds the last residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class VersionMismatch(WPModuliError):
    pass


class CorruptCheckpoint(WPModuliError):
    pass
