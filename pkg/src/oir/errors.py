"""Exception hierarchy shared by every module of the package."""


class OIRError(Exception):
    """Base class for all package errors."""


class NonUniqueStationary(OIRError):
    """The policy-induced Markov chain has more than one recurrent class."""

    def __init__(self, message, chain=None):
        super().__init__(message)
        self.chain = chain


class DegenerateDenominator(OIRError):
    """kappa + entropy is (numerically) zero, so the ratio is undefined."""


class ZeroOccupancy(OIRError):
    """A state has zero stationary mass, making -log d(s) infinite."""


class EmptyTrajectory(OIRError):
    pass


class UnreachableGoal(OIRError):
    pass


class MapFormatError(OIRError):
    pass


class LpInfeasible(OIRError):
    pass


class LpUnbounded(OIRError):
    pass


class SolverStalled(OIRError):
    """Frank-Wolfe stopped above tolerance; ``best`` holds the best iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(OIRError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
