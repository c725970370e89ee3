"""Riemannian SGD, streaming Riemannian averaging and the generic run loop.

One iteration of the pair of recursions is::

    x_n  = R_{x_{n-1}}(-gamma_n * g_n)          g_n a noisy gradient at x_{n-1}
    xt_n = R_{xt_{n-1}}(R_{xt_{n-1}}^{-1}(x_n) / n)

which on R^d is plain SGD followed by the running arithmetic mean.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import manifolds as mf
from .errors import AveragingDomainError, DomainError, PreconditionError, SingularityError
from .manifolds import ManifoldPoint, TangentVector


@dataclass(frozen=True)
class PolynomialDecay:
    """``gamma_n = C * n**(-alpha)``."""

    C: float
    alpha: float

    def __post_init__(self):
        if not self.C > 0:
            raise PreconditionError(f"C must be positive, got {self.C}")
        if not 0 < self.alpha <= 1:
            raise PreconditionError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def label(self) -> str:
        return f"poly_C{self.C:g}_a{self.alpha:g}"


@dataclass(frozen=True)
class Constant:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise PreconditionError(f"gamma must be positive, got {self.gamma}")

    @property
    def label(self) -> str:
        return f"const_g{self.gamma:g}"


StepSchedule = Union[PolynomialDecay, Constant]


def step_size(s: StepSchedule, n: int) -> float:
    if n < 1:
        raise DomainError(f"step index must be >= 1, got {n}")
    if isinstance(s, Constant):
        return float(s.gamma)
    return float(s.C * n ** (-s.alpha))


def step_sizes(s: StepSchedule, start: int, stop: int) -> np.ndarray:
    """Vector of ``step_size(s, n)`` for ``start <= n < stop``."""
    if start < 1:
        raise DomainError(f"step index must be >= 1, got {start}")
    n = np.arange(start, stop, dtype=float)
    if isinstance(s, Constant):
        return np.full(n.shape, float(s.gamma))
    return s.C * n ** (-s.alpha)


def make_rng(seed: int, run_index: int = 0, purpose: int = 0) -> np.random.Generator:
    """Philox generator for replicate ``run_index`` of an experiment seeded by ``seed``.

    Distinct run indices (or purposes, e.g. 0 = data stream, 1 = initial
    point) give statistically independent streams.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(run_index), int(purpose)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def sgd_step(x: ManifoldPoint, g, gamma: float, use_exp: bool = False) -> ManifoldPoint:
    """``R_x(-gamma * g)``; with ``use_exp`` the exponential map is the retraction."""
    v = -gamma * (g.vec if isinstance(g, TangentVector) else np.asarray(g, dtype=float))
    if use_exp:
        return mf.exp_map(x, v)
    return mf.retract(x, v)


def streaming_average_step(
    x_tilde_prev: ManifoldPoint, x_n: ManifoldPoint, n: int, use_exp: bool = False
) -> ManifoldPoint:
    if n < 1:
        raise DomainError(f"averaging index must be >= 1, got {n}")
    try:
        if use_exp:
            return mf.exp_map(x_tilde_prev, mf.log_map(x_tilde_prev, x_n).vec / n)
        if isinstance(x_tilde_prev.manifold, mf.Euclidean):
            # keep the exact arithmetic-mean recursion
            c = x_tilde_prev.coords
            return ManifoldPoint(x_tilde_prev.manifold, c + (x_n.coords - c) / n)
        return mf.retract(x_tilde_prev, mf.inverse_retract(x_tilde_prev, x_n).vec / n)
    except (DomainError, SingularityError) as exc:
        raise AveragingDomainError(str(exc), iteration=n) from exc


class GradientOracle(abc.ABC):
    """Noisy first-order oracle for a problem with a known optimum."""

    optimum: ManifoldPoint | None = None
    metric_id: str = "inverse_retraction_sq"

    @abc.abstractmethod
    def sample(self, x: ManifoldPoint, rng: np.random.Generator) -> TangentVector:
        """One draw of the stochastic gradient at ``x``."""

    def exact_gradient(self, x: ManifoldPoint) -> TangentVector:
        raise NotImplementedError

    def error(self, x: ManifoldPoint) -> float:
        """Squared distance of ``x`` to the optimum in the oracle's metric."""
        return mf.inverse_retract(self.optimum, x).norm ** 2


class QuadraticOracle(GradientOracle):
    """``f(x) = 1/2 (x - x*)^T diag(h) (x - x*)`` on R^d with Gaussian gradient noise."""

    metric_id = "euclidean_sq"

    def __init__(self, hessian_diag, noise_std: float = 1.0, optimum=None):
        self.hessian_diag = np.asarray(hessian_diag, dtype=float)
        self.noise_std = float(noise_std)
        d = self.hessian_diag.size
        self.manifold = mf.Euclidean(d)
        self.optimum = ManifoldPoint(self.manifold, np.zeros(d) if optimum is None else optimum)

    def exact_gradient(self, x):
        return TangentVector(x, self.hessian_diag * (x.coords - self.optimum.coords))

    def sample(self, x, rng):
        noise = self.noise_std * rng.standard_normal(self.manifold.d)
        return TangentVector(x, self.hessian_diag * (x.coords - self.optimum.coords) + noise)

    def error(self, x):
        return float(np.sum((x.coords - self.optimum.coords) ** 2))

    def predicted_trace(self) -> float:
        """``tr[H^{-1} Sigma H^{-1}]`` for isotropic noise."""
        return float(np.sum(self.noise_std**2 / self.hessian_diag**2))


def geometric_grid(n_iters: int, per_decade: int) -> np.ndarray:
    """Recording indices: 0, then ``per_decade`` log-spaced points per decade, then n_iters."""
    if per_decade < 1:
        raise PreconditionError("per_decade must be >= 1")
    if n_iters < 1:
        return np.array([0])
    top = np.log10(n_iters)
    pts = np.round(10.0 ** (np.arange(0, int(np.floor(top * per_decade)) + 1) / per_decade))
    return np.unique(np.concatenate([[0], pts.astype(np.int64), [n_iters]]))


def linear_grid(n_iters: int, every: int) -> np.ndarray:
    """0 and every multiple of ``every`` up to ``n_iters``."""
    if every < 1:
        raise PreconditionError("every must be >= 1")
    return np.arange(0, n_iters + 1, every, dtype=np.int64)


def _readonly(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Recorded errors of one seeded run.

    ``gamma[i]`` is the step size used to produce iterate ``iters[i]`` (0 at n = 0).
    """

    iters: np.ndarray
    gamma: np.ndarray
    err_sgd: np.ndarray
    err_avg: np.ndarray
    seed: int
    metric_id: str
    run_index: int = 0
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "iters", _readonly(self.iters, np.int64))
        for name in ("gamma", "err_sgd", "err_avg"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        n = len(self.iters)
        if not (len(self.gamma) == len(self.err_sgd) == len(self.err_avg) == n):
            raise PreconditionError("trajectory fields have different lengths")
        if n > 1 and np.any(np.diff(self.iters) <= 0):
            raise PreconditionError("iters must be strictly increasing")

    def __len__(self) -> int:
        return len(self.iters)

    def same_as(self, other: "Trajectory") -> bool:
        """Bitwise equality of all recorded arrays."""
        return (
            self.seed == other.seed
            and self.metric_id == other.metric_id
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("iters", "gamma", "err_sgd", "err_avg")
            )
        )


def mean_trajectory(trajs: list[Trajectory]) -> Trajectory:
    """Pointwise mean across replicates recorded on the same grid."""
    if not trajs:
        raise PreconditionError("no trajectories to average")
    first = trajs[0]
    for t in trajs[1:]:
        if not np.array_equal(t.iters, first.iters):
            raise PreconditionError("trajectories are recorded on different grids")
    if len(trajs) == 1:
        return first
    return Trajectory(
        iters=first.iters,
        gamma=first.gamma,
        err_sgd=np.mean([t.err_sgd for t in trajs], axis=0),
        err_avg=np.mean([t.err_avg for t in trajs], axis=0),
        seed=first.seed,
        metric_id=first.metric_id,
    )


def run_sgd(
    problem: GradientOracle,
    x0: ManifoldPoint,
    schedule: StepSchedule,
    n_iters: int,
    seed: int,
    record_every: int = 10,
    grid: str = "geometric",
    use_exp: bool = False,
    run_index: int = 0,
) -> Trajectory:
    """Run SGD and its streaming average jointly from ``x0``.

    Args:
        record_every: points per decade for ``grid="geometric"``, the
            recording period for ``grid="linear"``.
        use_exp: use exp/log maps instead of the default retraction pair.

    Raises:
        AveragingDomainError: carrying the failing iteration index.
    """
    if n_iters < 0:
        raise PreconditionError("n_iters must be non-negative")
    if grid == "geometric":
        rec = geometric_grid(n_iters, record_every)
    elif grid == "linear":
        rec = linear_grid(n_iters, record_every)
    else:
        raise PreconditionError(f"unknown grid {grid!r}")
    rng = make_rng(seed, run_index)
    x = x_tilde = x0
    out_n, out_g, out_e, out_a = [0], [0.0], [problem.error(x)], [problem.error(x_tilde)]
    rec_set = set(int(i) for i in rec[1:])
    for n in range(1, n_iters + 1):
        gamma = step_size(schedule, n)
        g = problem.sample(x, rng)
        try:
            x = sgd_step(x, g, gamma, use_exp=use_exp)
        except SingularityError as exc:
            raise AveragingDomainError(f"SGD step failed: {exc}", iteration=n) from exc
        x_tilde = streaming_average_step(x_tilde, x, n, use_exp=use_exp)
        if n in rec_set:
            out_n.append(n)
            out_g.append(gamma)
            out_e.append(problem.error(x))
            out_a.append(problem.error(x_tilde))
    return Trajectory(
        iters=out_n,
        gamma=out_g,
        err_sgd=out_e,
        err_avg=out_a,
        seed=seed,
        metric_id=problem.metric_id,
        run_index=run_index,
        extras={"x_final": x, "x_tilde_final": x_tilde},
    )
