"""Streaming k-PCA as Rayleigh-quotient minimization on G(d, k).

Update rules for one stochastic matrix ``H_n``:

* power:  ``R_X(gamma H_n X)``                      randomized power method
* rsgd:   ``R_X(gamma (I - X X^T) H_n X)``          Riemannian SGD
* oja:    ``X + gamma (I - X X^T) H_n X``           first-order, not orthonormal
* yang:   ``X + gamma (2 H_n - X X^T H_n - H_n X X^T) X``

and two streaming averages of the primal iterates:

* power average:       ``R_Xt(X_n X_n^T Xt / n)``
* retraction average:  ``R_Xt((I - Xt Xt^T) X_n (Xt^T X_n)^{-1} / n)``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import manifolds as mf
from .errors import AveragingDomainError, DimensionError, DomainError, PreconditionError
from .manifolds import Grassmann, ManifoldPoint, TangentVector
from .optim import GradientOracle


@dataclass(frozen=True)
class PcaProblem:
    """Top-k eigenspace of a symmetric PSD matrix ``H``.

    ``eigvals`` are sorted non-increasing and ``eigvecs[:, i]`` pairs with
    ``eigvals[i]``.  ``X_star`` spans the first k eigenvectors.
    """

    H: np.ndarray = field(repr=False)
    k: int
    eigvals: np.ndarray
    eigvecs: np.ndarray = field(repr=False)
    X_star: ManifoldPoint = field(repr=False)

    @classmethod
    def from_matrix(cls, H, k: int, eigvals=None, eigvecs=None) -> "PcaProblem":
        H = np.asarray(H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise DimensionError(f"H must be square, got shape {H.shape}")
        if not np.allclose(H, H.T, atol=1e-12):
            raise PreconditionError("H must be symmetric")
        if eigvals is None:
            w, v = np.linalg.eigh(H)
            eigvals, eigvecs = w[::-1], v[:, ::-1]
        eigvals = np.asarray(eigvals, dtype=float)
        eigvecs = np.asarray(eigvecs, dtype=float)
        x_star = ManifoldPoint(Grassmann(H.shape[0], k), eigvecs[:, :k])
        return cls(H, k, eigvals, eigvecs, x_star)

    @property
    def d(self) -> int:
        return self.H.shape[0]

    @property
    def eigengap(self) -> float:
        if self.k >= self.d:
            return np.inf
        return float(self.eigvals[self.k - 1] - self.eigvals[self.k])

    @property
    def manifold(self) -> Grassmann:
        return self.X_star.manifold


def _frame(X) -> np.ndarray:
    return X.coords if isinstance(X, ManifoldPoint) else np.asarray(X, dtype=float)


def _check_H(X: np.ndarray, H: np.ndarray) -> None:
    if H.shape != (X.shape[0], X.shape[0]):
        raise DimensionError(f"H of shape {H.shape} does not act on frames of shape {X.shape}")


def rayleigh_value(X, H) -> float:
    X, H = _frame(X), np.asarray(H, dtype=float)
    _check_H(X, H)
    return -0.5 * float(np.trace(X.T @ H @ X))


def riemannian_grad(X: ManifoldPoint, H_n) -> TangentVector:
    """``-(I - X X^T) H_n X``, the Riemannian gradient of ``-tr(X^T H_n X) / 2``."""
    H_n = np.asarray(H_n, dtype=float)
    _check_H(X.coords, H_n)
    hx = H_n @ X.coords
    return TangentVector(X, -(hx - X.coords @ (X.coords.T @ hx)))


def hessian_apply(X_star: ManifoldPoint, H, Delta) -> TangentVector:
    """``Delta X^T H X - (I - X X^T) H Delta`` at a frame ``X``."""
    H = np.asarray(H, dtype=float)
    X = X_star.coords
    _check_H(X, H)
    D = Delta.vec if isinstance(Delta, TangentVector) else np.asarray(Delta, dtype=float)
    viol = np.abs(X.T @ D).max(initial=0.0)
    if viol > 1e-8:
        raise PreconditionError(f"Delta is not tangent at X (violation {viol:.3g})")
    hd = H @ D
    out = D @ (X.T @ H @ X) - (hd - X @ (X.T @ hd))
    return mf.project_tangent(X_star, out)


def power_update(X: ManifoldPoint, H_n, gamma: float) -> ManifoldPoint:
    if not gamma > 0:
        raise PreconditionError("gamma must be positive")
    return mf.retract(X, gamma * (np.asarray(H_n, dtype=float) @ X.coords))


def oja_update(X, H_n, gamma: float) -> np.ndarray:
    X, H_n = _frame(X), np.asarray(H_n, dtype=float)
    hx = H_n @ X
    return X + gamma * (hx - X @ (X.T @ hx))


def yang_update(X, H_n, gamma: float) -> np.ndarray:
    X, H_n = _frame(X), np.asarray(H_n, dtype=float)
    hx = H_n @ X
    return X + gamma * (2.0 * hx - X @ (X.T @ hx) - H_n @ (X @ (X.T @ X)))


def rsgd_update(X: ManifoldPoint, H_n, gamma: float) -> ManifoldPoint:
    return mf.retract(X, -gamma * riemannian_grad(X, H_n).vec)


def pca_average_power(X_tilde: ManifoldPoint, X_n: ManifoldPoint, n: int) -> ManifoldPoint:
    if n < 1:
        raise DomainError("n must be >= 1")
    Xn = X_n.coords
    return mf.retract(X_tilde, Xn @ (Xn.T @ X_tilde.coords) / n)


def pca_average_retraction(X_tilde: ManifoldPoint, X_n: ManifoldPoint, n: int) -> ManifoldPoint:
    if n < 1:
        raise DomainError("n must be >= 1")
    try:
        v = mf.inverse_retract(X_tilde, X_n)
    except DomainError as exc:
        raise AveragingDomainError(str(exc), iteration=n) from exc
    return mf.retract(X_tilde, v.vec / n)


def eigengap_of_average(frames: list[ManifoldPoint]) -> dict:
    """Spectrum of ``mean_i X_i X_i^T`` and its gap between positions k and k+1."""
    if not frames:
        raise PreconditionError("need at least one frame")
    man = frames[0].manifold
    if any(f.manifold != man for f in frames):
        raise DimensionError("frames live on different Grassmannians")
    P = sum(f.coords @ f.coords.T for f in frames) / len(frames)
    spectrum = np.linalg.eigvalsh(P)[::-1]
    k = man.k
    nxt = spectrum[k] if k < man.d else 0.0
    return {"gap": float(spectrum[k - 1] - nxt), "spectrum": spectrum}


def tangent_basis(problem: PcaProblem) -> list[tuple[int, int, np.ndarray]]:
    """Basis ``v_i e_j^T`` of the tangent space at ``X_star``, i > k, j <= k (0-based)."""
    d, k = problem.d, problem.k
    out = []
    for j in range(k):
        for i in range(k, d):
            b = np.zeros((d, k))
            b[:, j] = problem.eigvecs[:, i]
            out.append((i, j, b))
    return out


def random_tangent(X: ManifoldPoint, rng: np.random.Generator, norm: float = 1.0) -> TangentVector:
    v = mf.project_tangent(X, rng.standard_normal(X.coords.shape)).vec
    return TangentVector(X, norm * v / np.linalg.norm(v))


def initial_frame(problem: PcaProblem, rng: np.random.Generator, radius: float = 0.1) -> ManifoldPoint:
    """``X_star`` moved by a random tangent step of Frobenius norm ``radius``, then retracted."""
    return mf.retract(problem.X_star, random_tangent(problem.X_star, rng, radius))


def subspace_error_sq(X_star: ManifoldPoint, X: ManifoldPoint) -> float:
    """``d_F^2 = ||(I - X* X*^T) X||_F^2`` (the sum of squared sines)."""
    S, Y = X_star.coords, X.coords
    return float(np.sum((Y - S @ (S.T @ Y)) ** 2))


class PcaGradientOracle(GradientOracle):
    """Rayleigh-quotient gradients ``-(I - X X^T) H_n X`` drawn from a matrix stream."""

    metric_id = "d_F_sq"

    def __init__(self, problem: PcaProblem, stream):
        self.problem = problem
        self.stream = stream
        self.optimum = problem.X_star

    def sample(self, x, rng):
        return riemannian_grad(x, self.stream.sample(rng))

    def exact_gradient(self, x):
        return riemannian_grad(x, self.problem.H)

    def error(self, x):
        return subspace_error_sq(self.problem.X_star, x)


def run_streaming_pca(
    stream,
    problem: PcaProblem,
    schedule,
    n_iters: int,
    seed: int,
    update_rule: str = "power",
    average_rule: str = "power",
    per_decade: int = 10,
    run_index: int = 0,
    init_radius: float = 0.1,
):
    """Single replicate of streaming k-PCA; errors are ``d_F^2`` to ``X_star``.

    Raises:
        AveragingDomainError: if the run leaves the domain, with the iteration index.
    """
    from .engine import run_pca_batch

    res = run_pca_batch(
        problem, stream, schedule, n_iters, seed, [run_index],
        update_rule=update_rule, average_rule=average_rule,
        per_decade=per_decade, init_radius=init_radius,
    )
    if res.aborts:
        it, msg = res.aborts[run_index]
        raise AveragingDomainError(msg, iteration=it)
    return res.trajectories[0]
