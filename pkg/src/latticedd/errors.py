"""Exception hierarchy shared by all latticedd modules."""


class LatticeDDError(Exception):
    """Base class for every error raised by latticedd."""


class NotPositiveDefinite(LatticeDDError):
    """A Cholesky pivot was not strictly positive."""


class IterationError(LatticeDDError):
    """Base for iterative-solver failures; carries the best iterate."""

    def __init__(self, message, x=None, stats=None):
        super().__init__(message)
        self.x = x
        self.stats = stats


class MaxIterations(IterationError):
    pass


class Breakdown(IterationError):
    pass


class NegativeCurvature(IterationError):
    """CG met a direction p with p^T A p <= 0."""


class UnknownPattern(LatticeDDError):
    pass


class DegenerateJacobian(LatticeDDError):
    pass


class DimensionMismatch(LatticeDDError):
    pass


class FaceNotOnBoundary(LatticeDDError):
    pass


class EmptyPrimalSet(LatticeDDError):
    pass


class RankDeficient(LatticeDDError):
    pass


class SingularBasisChange(LatticeDDError):
    pass


class SingularGram(LatticeDDError):
    pass


class ConfigError(LatticeDDError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path)
        super().__init__(f"{where or '<root>'}: {message}")


class MaxOuterIterations(MaxIterations):
    """The outer saddle-point iteration did not converge."""


class IoError(LatticeDDError, OSError):
    """A result file could not be written."""
