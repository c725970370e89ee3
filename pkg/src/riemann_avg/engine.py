"""Vectorized replicate engines.

Each engine advances ``R`` independent replicates in lockstep on stacked
arrays.  Replicate ``r`` draws its data from ``make_rng(seed, run_indices[r])``
in chunks; chunked draws consume the generator exactly like step-by-step
draws, so a replicate's result does not depend on which other replicates
share its batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .manifolds import GRAM_FLOOR, INVERSE_DOMAIN_TOL
from .optim import (
    Constant,
    PolynomialDecay,
    Trajectory,
    geometric_grid,
    make_rng,
    step_sizes,
)

CHUNK = 4096


@dataclass
class BatchResult:
    """Trajectories of the replicates that finished, plus abort diagnostics.

    ``trajectories`` is aligned with the requested run indices and holds None
    for aborted replicates; ``aborts`` maps run index to (iteration, message).
    ``final_delta_sq`` is ``||R_{x*}^{-1}(x~_n)||^2`` at the last iteration
    (NaN for aborted replicates).
    """

    trajectories: list
    aborts: dict = field(default_factory=dict)
    final_delta_sq: np.ndarray | None = None


def polar_rows(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal polar factor of each ``Y[r]`` (shape (R, d, k)).

    Returns the factors and a boolean mask of replicates whose Gram matrix
    fell below the eigenvalue floor (their factor is left as NaN).
    """
    if Y.shape[2] == 1:
        g = np.einsum("rdk,rdk->r", Y, Y)
        bad = g < GRAM_FLOOR
        return Y / np.sqrt(np.where(bad, np.nan, g))[:, None, None], bad
    gram = np.einsum("rdi,rdj->rij", Y, Y)
    w, q = np.linalg.eigh(gram)
    bad = w[:, 0] < GRAM_FLOOR
    w = np.where(bad[:, None], np.nan, w)
    inv_sqrt = np.einsum("rik,rk,rjk->rij", q, 1.0 / np.sqrt(w), q)
    return Y @ inv_sqrt, bad


def _grid(n_iters: int, per_decade: int):
    rec = geometric_grid(n_iters, per_decade)
    return rec, set(int(i) for i in rec[1:])


class _Recorder:
    def __init__(self, rec, R):
        self.rec = rec
        self.pos = {int(n): i for i, n in enumerate(rec)}
        self.gamma = np.zeros(len(rec))
        self.err_sgd = np.full((R, len(rec)), np.nan)
        self.err_avg = np.full((R, len(rec)), np.nan)

    def put(self, n, gamma, e_sgd, e_avg):
        i = self.pos[n]
        self.gamma[i] = gamma
        self.err_sgd[:, i] = e_sgd
        self.err_avg[:, i] = e_avg

    def trajectories(self, seed, run_indices, metric_id, alive, extras=None):
        out = []
        for r, idx in enumerate(run_indices):
            if not alive[r]:
                out.append(None)
                continue
            out.append(Trajectory(
                iters=self.rec, gamma=self.gamma, err_sgd=self.err_sgd[r],
                err_avg=self.err_avg[r], seed=seed, metric_id=metric_id,
                run_index=int(idx), extras=(extras[r] if extras else {}),
            ))
        return out


def _check_schedule(schedule):
    if not isinstance(schedule, (PolynomialDecay, Constant)):
        raise PreconditionError(f"unsupported schedule {schedule!r}")


# --------------------------------------------------------------------------
# streaming PCA on G(d, k)


def _dF_sq(S: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Row-wise ``||(I - S S^T) X_r||_F^2``."""
    resid = X - S @ np.einsum("dk,rdj->rkj", S, X)
    return np.einsum("rdk,rdk->r", resid, resid)


def _delta_sq(S: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Row-wise ``||(I - S S^T) X_r (S^T X_r)^{-1}||_F^2``; inf where S^T X_r is singular."""
    M = np.einsum("dk,rdj->rkj", S, X)
    resid = X - S @ M
    out = np.full(X.shape[0], np.inf)
    sv = np.linalg.svd(M, compute_uv=False)[:, -1]
    ok = sv > INVERSE_DOMAIN_TOL
    if ok.any():
        D = np.linalg.solve(np.transpose(M[ok], (0, 2, 1)), np.transpose(resid[ok], (0, 2, 1)))
        out[ok] = np.einsum("rkd,rkd->r", D, D)
    return out


def run_pca_batch(
    problem,
    stream,
    schedule,
    n_iters: int,
    seed: int,
    run_indices,
    update_rule: str = "power",
    average_rule: str = "power",
    per_decade: int = 10,
    init_radius: float = 0.1,
    x0=None,
) -> BatchResult:
    """Streaming k-PCA for several replicates at once.

    Args:
        update_rule: ``"power"`` (randomized power method) or ``"rsgd"``.
        average_rule: ``"power"`` (one power step on the running projector
            average) or ``"retraction"`` (the generic streaming average).
        x0: optional (R, d, k) initial frames; by default each replicate
            starts at ``X_star`` moved by a random tangent step of norm
            ``init_radius`` drawn from ``make_rng(seed, run_index, 1)``.
    """
    from .pca import initial_frame

    _check_schedule(schedule)
    if update_rule not in ("power", "rsgd"):
        raise PreconditionError(f"unknown update rule {update_rule!r}")
    if average_rule not in ("power", "retraction"):
        raise PreconditionError(f"unknown average rule {average_rule!r}")
    if stream.d != problem.d:
        raise PreconditionError("stream and problem dimensions differ")
    run_indices = [int(i) for i in run_indices]
    R, d, k = len(run_indices), problem.d, problem.k
    S = problem.X_star.coords
    if x0 is None:
        X = np.stack([
            initial_frame(problem, make_rng(seed, i, purpose=1), init_radius).coords
            for i in run_indices
        ])
    else:
        X = np.array(x0, dtype=float).reshape(R, d, k)
    Xt = X.copy()
    rngs = [make_rng(seed, i) for i in run_indices]
    rec, rec_set = _grid(n_iters, per_decade)
    out = _Recorder(rec, R)
    out.put(0, 0.0, _dF_sq(S, X), _dF_sq(S, Xt))
    alive = np.ones(R, dtype=bool)
    aborts: dict = {}
    H = stream.mean if not stream.is_rank_one else None

    def kill(mask, n, msg):
        for r in np.flatnonzero(mask & alive):
            aborts[run_indices[r]] = (n, msg)
        alive[mask] = False

    for start in range(1, n_iters + 1, CHUNK):
        stop = min(start + CHUNK, n_iters + 1)
        gammas = step_sizes(schedule, start, stop)
        if H is None:
            h_all = np.stack([stream.sample_factors(g, stop - start) for g in rngs], axis=1)
        for j, n in enumerate(range(start, stop)):
            gamma = gammas[j]
            if H is None:
                h = h_all[j]
                hX = np.einsum("rd,rdk->rk", h, X)
                if update_rule == "power":
                    Y = X + gamma * h[:, :, None] * hX[:, None, :]
                else:
                    u = h - np.einsum("rdk,rk->rd", X, hX)
                    Y = X + gamma * u[:, :, None] * hX[:, None, :]
            else:
                HX = H @ X
                if update_rule == "power":
                    Y = X + gamma * HX
                else:
                    Y = X + gamma * (HX - X @ np.einsum("rdi,rdj->rij", X, HX))
            Xn, bad = polar_rows(Y)
            if bad.any():
                kill(bad, n, "power/SGD step: Gram matrix singular")
                Xn[bad] = X[bad]
            X = Xn

            if average_rule == "power":
                Z = Xt + (X @ np.einsum("rdi,rdj->rij", X, Xt)) / n
            else:
                M = np.einsum("rdi,rdj->rij", Xt, X)
                sing = np.linalg.svd(M, compute_uv=False)[:, -1] <= INVERSE_DOMAIN_TOL
                if sing.any():
                    kill(sing, n, "averaging step: Xt^T X_n singular")
                    M[sing] = np.eye(k)
                V = np.transpose(
                    np.linalg.solve(np.transpose(M, (0, 2, 1)),
                                    np.transpose(X - Xt @ M, (0, 2, 1))),
                    (0, 2, 1),
                )
                Z = Xt + V / n
            Xtn, bad = polar_rows(Z)
            if bad.any():
                kill(bad, n, "averaging step: Gram matrix singular")
                Xtn[bad] = Xt[bad]
            Xt = Xtn
            if n in rec_set:
                out.put(n, gamma, _dF_sq(S, X), _dF_sq(S, Xt))

    delta = _delta_sq(S, Xt)
    delta[~alive] = np.nan
    return BatchResult(out.trajectories(seed, run_indices, "d_F_sq", alive), aborts, delta)


# --------------------------------------------------------------------------
# Frechet mean on the sphere (exponential map as retraction)


def run_sphere_batch(problem, schedule, n_iters: int, seed: int, run_indices,
                     per_decade: int = 10, karcher_n: int = 50, init_radius: float = 0.1,
                     x0=None) -> BatchResult:
    from .sphere import initial_sphere_point, karcher_check, exp_rows, log_rows, sample_tangents

    _check_schedule(schedule)
    run_indices = [int(i) for i in run_indices]
    R, d = len(run_indices), problem.d
    mu = problem.mu_point.coords
    if x0 is None:
        x = np.stack([
            initial_sphere_point(problem, make_rng(seed, i, purpose=1), init_radius).coords
            for i in run_indices
        ])
    else:
        x = np.array(x0, dtype=float).reshape(R, d)
    xt = x.copy()
    rngs = [make_rng(seed, i) for i in run_indices]
    rec, rec_set = _grid(n_iters, per_decade)
    out = _Recorder(rec, R)
    mus = np.broadcast_to(mu, (R, d))

    def err(p):
        return np.sum(log_rows(mus, p) ** 2, axis=1)

    out.put(0, 0.0, err(x), err(xt))
    early = np.empty((R, min(karcher_n, n_iters), d))
    for start in range(1, n_iters + 1, CHUNK):
        stop = min(start + CHUNK, n_iters + 1)
        gammas = step_sizes(schedule, start, stop)
        xi = np.stack([sample_tangents(problem, g, stop - start) for g in rngs], axis=1)
        z_all = exp_rows(np.broadcast_to(mu, xi.shape), xi)
        for j, n in enumerate(range(start, stop)):
            gamma = gammas[j]
            x = exp_rows(x, gamma * log_rows(x, z_all[j]))
            xt = exp_rows(xt, log_rows(xt, x) / n)
            if n <= early.shape[1]:
                early[:, n - 1] = x
            if n in rec_set:
                out.put(n, gamma, err(x), err(xt))
    extras = None
    if karcher_n > 0:
        from .manifolds import ManifoldPoint
        star = ManifoldPoint(problem.mu_point.manifold, mu)
        extras = [{"karcher": karcher_check(star, early[r], karcher_n)} for r in range(R)]
    alive = np.ones(R, dtype=bool)
    return BatchResult(out.trajectories(seed, run_indices, "geodesic_sq", alive, extras),
                       {}, err(xt))


# --------------------------------------------------------------------------
# Euclidean quadratic (Polyak-Ruppert reference problem)


def run_quadratic_batch(oracle, schedule, n_iters: int, seed: int, run_indices,
                        per_decade: int = 10, x0=None) -> BatchResult:
    """SGD on ``QuadraticOracle`` with the arithmetic running mean.

    Replicates start at ``x0`` (default: the origin shifted by one unit along
    every axis).
    """
    _check_schedule(schedule)
    run_indices = [int(i) for i in run_indices]
    R, d = len(run_indices), oracle.manifold.d
    hd, star, sd = oracle.hessian_diag, oracle.optimum.coords, oracle.noise_std
    x = np.broadcast_to(star + 1.0 if x0 is None else np.asarray(x0, float), (R, d)).copy()
    xt = x.copy()
    rngs = [make_rng(seed, i) for i in run_indices]
    rec, rec_set = _grid(n_iters, per_decade)
    out = _Recorder(rec, R)

    def err(p):
        return np.sum((p - star) ** 2, axis=1)

    out.put(0, 0.0, err(x), err(xt))
    for start in range(1, n_iters + 1, CHUNK):
        stop = min(start + CHUNK, n_iters + 1)
        gammas = step_sizes(schedule, start, stop)
        eps = np.stack([g.standard_normal((stop - start, d)) for g in rngs], axis=1)
        for j, n in enumerate(range(start, stop)):
            x = x - gammas[j] * (hd * (x - star) + sd * eps[j])
            xt = xt + (x - xt) / n
            if n in rec_set:
                out.put(n, gammas[j], err(x), err(xt))
    alive = np.ones(R, dtype=bool)
    return BatchResult(out.trajectories(seed, run_indices, "euclidean_sq", alive), {}, err(xt))
