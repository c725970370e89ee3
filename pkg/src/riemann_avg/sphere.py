"""Streaming Frechet mean on the sphere.

Samples ``z`` are drawn around a centre ``mu`` and the objective is
``f(x) = E d^2(x, z) / 2``.  Its stochastic gradient is ``-log_x(z)``, so a
step of SGD with the exponential map moves ``x`` a fraction ``gamma`` of the
way along the great circle towards ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import manifolds as mf
from .errors import ConvergenceError, PreconditionError
from .manifolds import ManifoldPoint, Sphere, TangentVector
from .optim import GradientOracle, PolynomialDecay

TRUNCATION_RADIUS = np.pi / 4


@dataclass(frozen=True)
class SphereMeanProblem:
    """Tangent-Gaussian samples around ``mu_point`` truncated to ``|xi| <= pi/4``.

    The truncated law is symmetric about ``mu_point``, so ``mu_point`` is its
    Frechet mean and the optimum of the problem.
    """

    mu_point: ManifoldPoint = field(repr=False)
    dispersion: float

    def __post_init__(self):
        if not isinstance(self.mu_point.manifold, Sphere):
            raise PreconditionError("mu_point must lie on a sphere")
        if not 0 <= self.dispersion <= 0.5:
            raise PreconditionError(f"dispersion must lie in [0, 0.5], got {self.dispersion}")

    @classmethod
    def standard(cls, d: int, dispersion: float) -> "SphereMeanProblem":
        """Centre at the first basis vector of R^d."""
        return cls(ManifoldPoint(Sphere(d), np.eye(d)[0]), dispersion)

    @property
    def d(self) -> int:
        return self.mu_point.manifold.d

    @property
    def optimum(self) -> ManifoldPoint:
        return self.mu_point


def sample_tangents(problem: SphereMeanProblem, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` accepted tangent vectors at ``mu_point``, as rows.

    Each attempt consumes ``d`` normals; rejected attempts are redrawn in
    order, so the result matches ``size`` sequential single draws.
    """
    mu = problem.mu_point.coords
    out = np.empty((size, problem.d))
    got = 0
    while got < size:
        g = problem.dispersion * rng.standard_normal((size - got, problem.d))
        g -= np.outer(g @ mu, mu)
        ok = g[np.linalg.norm(g, axis=1) <= TRUNCATION_RADIUS]
        out[got : got + len(ok)] = ok
        got += len(ok)
    return out


def exp_rows(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise sphere exponential map ``exp_x(v)`` for stacked points."""
    t = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(t > 0, t, 1.0)
    y = np.cos(t) * x + np.sin(t) * (v / safe)
    return y / np.linalg.norm(y, axis=-1, keepdims=True)


def log_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise sphere log map ``log_x(y)`` (non-antipodal inputs)."""
    c = np.sum(x * y, axis=-1, keepdims=True)
    w = y - c * x
    s = np.linalg.norm(w, axis=-1, keepdims=True)
    theta = np.arctan2(s, c)
    return np.where(s > 0, theta / np.where(s > 0, s, 1.0), 0.0) * w


def sample_sphere_points(problem: SphereMeanProblem, rng: np.random.Generator, size: int) -> np.ndarray:
    xi = sample_tangents(problem, rng, size)
    return exp_rows(np.broadcast_to(problem.mu_point.coords, xi.shape), xi)


def sample_sphere_point(problem: SphereMeanProblem, rng: np.random.Generator) -> ManifoldPoint:
    return ManifoldPoint(problem.mu_point.manifold, sample_sphere_points(problem, rng, 1)[0])


def frechet_gradient_sample(x: ManifoldPoint, z: ManifoldPoint) -> TangentVector:
    """``-log_x(z)``, the gradient of ``d^2(x, z) / 2``."""
    return -mf.log_map(x, z)


class SphereMeanOracle(GradientOracle):
    metric_id = "geodesic_sq"

    def __init__(self, problem: SphereMeanProblem):
        self.problem = problem
        self.optimum = problem.mu_point

    def sample(self, x, rng):
        return frechet_gradient_sample(x, sample_sphere_point(self.problem, rng))

    def error(self, x):
        return mf.log_map(self.optimum, x).norm ** 2


def karcher_gradient(x: ManifoldPoint, points: np.ndarray) -> np.ndarray:
    """Mean of ``log_x(p_i)``: minus the Riemannian gradient of the mean squared distance / 2."""
    return log_rows(np.broadcast_to(x.coords, points.shape), points).mean(axis=0)


def karcher_mean_bruteforce(points, tol: float = 1e-12, max_iter: int = 10_000) -> ManifoldPoint:
    """Fixed-point iteration ``x <- exp_x(mean_i log_x(p_i))``.

    Args:
        points: list of ManifoldPoint or an (m, d) array of unit rows.

    Raises:
        ConvergenceError: if the step norm is still above ``tol`` after
            ``max_iter`` iterations.
    """
    if isinstance(points, (list, tuple)):
        manifold = points[0].manifold
        P = np.stack([p.coords for p in points])
    else:
        P = np.asarray(points, dtype=float)
        manifold = Sphere(P.shape[1])
    if len(P) == 1:
        return ManifoldPoint(manifold, P[0])
    m = P.mean(axis=0)
    x = ManifoldPoint(manifold, m / np.linalg.norm(m))
    for _ in range(max_iter):
        step = karcher_gradient(x, P)
        if np.linalg.norm(step) < tol:
            return x
        x = mf.exp_map(x, step)
    raise ConvergenceError(f"Karcher iteration did not reach tol={tol:g} in {max_iter} steps")


def initial_sphere_point(problem: SphereMeanProblem, rng: np.random.Generator, radius: float = 0.1) -> ManifoldPoint:
    """``mu_point`` moved by a random tangent step of length ``radius``."""
    mu = problem.mu_point
    v = mf.project_tangent(mu, rng.standard_normal(problem.d)).vec
    return mf.exp_map(mu, radius * v / np.linalg.norm(v))


def karcher_check(x_star: ManifoldPoint, iterates: np.ndarray, n_max: int = 50) -> list[dict]:
    """Compare ``|log_{x*}(K_n)|^2`` with ``2 |mean_i log_{x*}(x_i)|^2`` for n <= n_max.

    ``iterates`` holds ``x_1, x_2, ...`` as rows; ``K_n`` is the Karcher mean
    of the first ``n`` of them.
    """
    rows = []
    logs = log_rows(np.broadcast_to(x_star.coords, iterates.shape), iterates)
    for n in range(1, min(n_max, len(iterates)) + 1):
        K = karcher_mean_bruteforce(iterates[:n])
        lhs = mf.log_map(x_star, K).norm ** 2
        rhs = 2.0 * float(np.sum(logs[:n].mean(axis=0) ** 2))
        rows.append({"n": n, "karcher_sq": lhs, "bound": rhs, "holds": lhs <= rhs + 1e-9})
    return rows


def run_sphere_mean(problem: SphereMeanProblem, schedule, n_iters: int, seed: int,
                    per_decade: int = 10, run_index: int = 0, karcher_n: int = 50):
    """One replicate of SGD with exp/log maps plus its streaming average.

    Errors are squared geodesic distances to ``mu_point``.  The returned
    trajectory carries ``extras["karcher"]``, the per-n rows of
    :func:`karcher_check` for the first ``karcher_n`` iterates.
    """
    from .engine import run_sphere_batch

    if not isinstance(schedule, PolynomialDecay) or not 0.5 <= schedule.alpha < 1:
        raise PreconditionError("run_sphere_mean needs a PolynomialDecay schedule with alpha in [1/2, 1)")
    res = run_sphere_batch(problem, schedule, n_iters, seed, [run_index],
                           per_decade=per_decade, karcher_n=karcher_n)
    return res.trajectories[0]
