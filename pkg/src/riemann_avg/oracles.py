"""Analytic and statistical oracles: asymptotic covariances, slope fits, Monte Carlo."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGapError, FitError, PreconditionError
from .optim import Trajectory


def pca_asymptotic_covariance(problem, kappa: float = 1.0, tensor=None) -> dict:
    """Limiting covariance of ``sqrt(n) R_{X*}^{-1}(X~_n)`` for streaming k-PCA.

    Coordinates are taken in the tangent basis ``v_i e_j^T`` (i > k, j <= k),
    ordered with j outer and i inner, matching :func:`pca.tangent_basis`.

    With ``tensor=None`` the fourth-moment tensor is ``kappa * delta delta``
    (rank-one Gaussian streams have kappa = 1) and ``C`` is diagonal with
    entries ``kappa * l_i l_j / (l_j - l_i)^2``.  Otherwise ``tensor[a, b]``
    must hold ``E[(v_i^T Ht v_j)(v_i'^T Ht v_j')]`` for basis indices
    ``a = (i, j)`` and ``b = (i', j')``.

    Raises:
        DegenerateGapError: if some ``l_j == l_i`` with j <= k < i.
    """
    lam = np.asarray(problem.eigvals, dtype=float)
    k, d = problem.k, len(lam)
    if not kappa > 0:
        raise PreconditionError("kappa must be positive")
    if k >= d:
        return {"C": np.zeros((0, 0)), "trace": 0.0}
    lj = np.repeat(lam[:k], d - k)
    li = np.tile(lam[k:], k)
    gap = lj - li
    if np.any(gap == 0):
        raise DegenerateGapError("an eigenvalue in the top block equals one in the complement")
    w = np.sqrt(li * lj) / gap
    if tensor is None:
        C = np.diag(kappa * w**2)
    else:
        C = np.outer(w, w) * np.asarray(tensor, dtype=float)
    return {"C": C, "trace": float(np.trace(C))}


def sandwich_trace(hessian_eigs, Sigma_diag) -> float:
    """``tr[H^{-1} Sigma H^{-1}]`` for co-diagonal ``H`` and ``Sigma``."""
    h = np.asarray(hessian_eigs, dtype=float)
    s = np.asarray(Sigma_diag, dtype=float)
    if h.shape != s.shape:
        raise PreconditionError("hessian_eigs and Sigma_diag have different lengths")
    if np.any(h == 0):
        raise DegenerateGapError("zero Hessian eigenvalue")
    return float(np.sum(s / h**2))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    n_points: int
    n_excluded: int


def fit_power_law(n, err, n_min: float = 1, n_max: int | None = None, min_points: int = 8) -> SlopeFit:
    """Least-squares line through ``(log10 n, log10 err)`` for ``n_min <= n <= n_max``.

    Non-positive errors in the window are dropped and counted in ``n_excluded``.
    """
    n = np.asarray(n, dtype=float)
    err = np.asarray(err, dtype=float)
    win = (n >= n_min) & (n > 0)
    if n_max is not None:
        win &= n <= n_max
    good = win & (err > 0) & np.isfinite(err)
    if good.sum() < min_points:
        raise FitError(f"only {int(good.sum())} usable points in window (need {min_points})")
    x, y = np.log10(n[good]), np.log10(err[good])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), float(r2), int(good.sum()),
                    int(win.sum() - good.sum()))


def fit_loglog_slope(traj: Trajectory, field: str = "err_avg", n_min: int = 1,
                     n_max: int | None = None) -> SlopeFit:
    if field not in ("err_sgd", "err_avg"):
        raise PreconditionError(f"field must be err_sgd or err_avg, got {field!r}")
    return fit_power_law(traj.iters, getattr(traj, field), n_min, n_max)


@dataclass(frozen=True)
class CovarianceReport:
    trace_predicted: float
    trace_empirical: float
    stderr: float
    n_used: int
    replicates: int
    aborted: int = 0

    @property
    def z_score(self) -> float:
        return (self.trace_empirical - self.trace_predicted) / self.stderr

    @property
    def relative_error(self) -> float:
        return abs(self.trace_empirical / self.trace_predicted - 1.0)


def monte_carlo_scaled_error(problem, schedule, replicates: int, n: int, seed: int,
                             stream=None, run_offset: int = 0, **engine_kwargs) -> CovarianceReport:
    """Mean of ``n ||R_{x*}^{-1}(x~_n)||^2`` over independent replicates.

    ``problem`` is a :class:`~riemann_avg.pca.PcaProblem` (with ``stream``),
    a :class:`~riemann_avg.optim.QuadraticOracle` or a
    :class:`~riemann_avg.sphere.SphereMeanProblem`.  The prediction is the
    sandwich trace for the first two and NaN for the sphere.

    Raises:
        PreconditionError: fewer than 30 replicates, or more than 10% of the
            replicates aborted.
    """
    from .engine import run_pca_batch, run_quadratic_batch, run_sphere_batch
    from .optim import QuadraticOracle
    from .pca import PcaProblem
    from .sphere import SphereMeanProblem

    if replicates < 30:
        raise PreconditionError("need at least 30 replicates")
    idx = range(run_offset, run_offset + replicates)
    if isinstance(problem, PcaProblem):
        if stream is None:
            raise PreconditionError("a PCA problem needs a matrix stream")
        res = run_pca_batch(problem, stream, schedule, n, seed, idx, per_decade=1, **engine_kwargs)
        kappa = 1.0 if stream.kind == "rank_one_gaussian" else np.nan
        predicted = pca_asymptotic_covariance(problem, kappa)["trace"] if kappa == kappa else np.nan
    elif isinstance(problem, QuadraticOracle):
        res = run_quadratic_batch(problem, schedule, n, seed, idx, per_decade=1, **engine_kwargs)
        predicted = problem.predicted_trace()
    elif isinstance(problem, SphereMeanProblem):
        res = run_sphere_batch(problem, schedule, n, seed, idx, per_decade=1, karcher_n=0,
                               **engine_kwargs)
        predicted = np.nan
    else:
        raise PreconditionError(f"unsupported problem type {type(problem).__name__}")
    scaled = n * res.final_delta_sq
    ok = np.isfinite(scaled)
    aborted = int(replicates - ok.sum())
    if aborted > 0.1 * replicates:
        raise PreconditionError(f"{aborted} of {replicates} replicates aborted")
    vals = scaled[ok]
    return CovarianceReport(
        trace_predicted=float(predicted),
        trace_empirical=float(vals.mean()),
        stderr=float(vals.std(ddof=1) / np.sqrt(len(vals))),
        n_used=n,
        replicates=int(ok.sum()),
        aborted=aborted,
    )
