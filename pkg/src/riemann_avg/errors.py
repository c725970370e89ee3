"""Exception hierarchy shared by all modules."""


class RiemannAvgError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(RiemannAvgError, ValueError):
    """Shapes or manifolds of the inputs do not agree."""


class SingularityError(RiemannAvgError, ArithmeticError):
    """A Gram matrix fell below the eigenvalue floor during a retraction."""


class DomainError(RiemannAvgError, ValueError):
    """An input lies outside the domain of a map (antipodal, orthogonal, ...)."""


class AveragingDomainError(DomainError):
    """The streaming average could not be formed at some iteration.

    Attributes:
        iteration: index ``n`` of the failing averaging step, if known.
    """

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class UnsupportedMapError(RiemannAvgError, NotImplementedError):
    """The requested map is not provided for this manifold."""


class PreconditionError(RiemannAvgError, ValueError):
    """An argument violates a documented precondition."""


class ConvergenceError(RiemannAvgError, RuntimeError):
    """An inner iterative solver did not converge."""


class DegenerateGapError(RiemannAvgError, ValueError):
    """A spectral gap or Hessian eigenvalue that must be positive is zero."""


class FitError(RiemannAvgError, ValueError):
    """Not enough usable points for a regression."""
