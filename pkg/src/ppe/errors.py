"""Exception hierarchy shared by all modules."""


class PpeError(Exception):
    """Base class for every error raised by this package."""


class FitError(PpeError, ArithmeticError):
    """A plane could not be fitted; clustering treats the action as infeasible."""


class DegenerateSet(FitError):
    """Member endpoints are (nearly) collinear, or there are fewer than three."""


class NoConvergence(FitError):
    """Gauss-Newton refinement did not converge within its iteration budget."""


class ParallelRay(FitError):
    """A member ray is closer to parallel with the plane than allowed."""


class InconsistentAssignment(PpeError, ValueError):
    """An assigned ray does not intersect the plane it is assigned to."""


class EmptyScan(PpeError, ValueError):
    pass


class StaleCandidate(PpeError, RuntimeError):
    """The operands of a candidate changed after it was evaluated."""


class TooFewPoints(PpeError, ValueError):
    pass


class InvalidRecipe(PpeError, ValueError):
    pass


class DimensionMismatch(PpeError, ValueError):
    pass


class NoPlanes(PpeError, ValueError):
    pass


class EmptyGrid(PpeError, ValueError):
    pass


class ParseError(PpeError, ValueError):
    """Malformed input file; carries the path and 1-based line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(where + message)
