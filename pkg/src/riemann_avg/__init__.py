"""Streaming averaged SGD on Riemannian manifolds: sphere, Grassmann and Euclidean."""

from .errors import (
    AveragingDomainError,
    ConvergenceError,
    DegenerateGapError,
    DimensionError,
    DomainError,
    FitError,
    PreconditionError,
    RiemannAvgError,
    SingularityError,
    UnsupportedMapError,
)
from .manifolds import Euclidean, Grassmann, ManifoldPoint, Sphere, TangentVector
from .optim import Constant, PolynomialDecay, Trajectory, run_sgd
from .pca import PcaProblem, run_streaming_pca
from .sphere import SphereMeanProblem, run_sphere_mean
from .streams import MatrixStream, SpectrumSpec, make_covariance

__version__ = "0.1.0"

__all__ = [
    "AveragingDomainError", "ConvergenceError", "DegenerateGapError", "DimensionError",
    "DomainError", "FitError", "PreconditionError", "RiemannAvgError", "SingularityError",
    "UnsupportedMapError", "Euclidean", "Grassmann", "ManifoldPoint", "Sphere",
    "TangentVector", "Constant", "PolynomialDecay", "Trajectory", "run_sgd", "PcaProblem",
    "run_streaming_pca", "SphereMeanProblem", "run_sphere_mean", "MatrixStream",
    "SpectrumSpec", "make_covariance",
]
