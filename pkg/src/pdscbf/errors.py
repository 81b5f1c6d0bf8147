"""Exception hierarchy shared by all modules."""


class PdsCbfError(Exception):
    """Base class for every error raised by this package."""


class EvaluationError(PdsCbfError):
    """A user callback returned a non-finite value."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = x


class DomainError(PdsCbfError):
    """A point lies outside the set on which an operation is defined."""


class RegularityError(PdsCbfError):
    """The constraint gradient vanishes where it must not."""


class InfeasibleError(PdsCbfError):
    """A single-constraint QP has an empty feasible set."""


class ProjectionError(PdsCbfError):
    """Iterative projection onto the constraint set failed to converge."""


class EstimationError(PdsCbfError):
    """A numerical search (boundary bracket, inverse bisection) failed."""


class ConfigError(PdsCbfError):
    """Invalid configuration or scheme/kind mismatch."""


class PreconditionError(PdsCbfError):
    """An argument violates a documented precondition (e.g. alpha below alpha_star)."""
