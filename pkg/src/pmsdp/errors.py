"""Exception types shared across the package."""


class PmsdpError(Exception):
    """Base class for all library errors."""


class InvalidInput(PmsdpError):
    """Malformed or inconsistent input (shape mismatch, non-finite data, ...)."""


class DegenerateInput(PmsdpError):
    """Numerically rank-deficient input where a unique answer needs full rank."""


class TooManyAxes(PmsdpError):
    """Sign-matrix enumeration refused: 2^d blows up past d = 20."""


class RepeatedPoints(PmsdpError):
    """A point cloud contains (numerically) duplicated points."""


class TooLarge(PmsdpError):
    """Instance exceeds the size cap of an enumeration-based routine."""


class EpsTooSmall(PmsdpError):
    """Objective slack below the relaxation optimum: sliced problem infeasible."""


class RoundingFailed(PmsdpError):
    """A moment solution could not be projected to a rigid match."""


class NoSolutionsFound(PmsdpError):
    """Every recovery trial failed rounding or verification."""


class GenerationFailed(PmsdpError):
    """An instance generator exhausted its rejection-sampling budget."""


class RelaxationError(PmsdpError):
    """The SDP solver did not reach an optimal status for a relaxation solve.

    Carries the offending solver result in ``solution`` for diagnostics.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
