"""Randomized property suites shared by ``riemann-avg selftest`` and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import manifolds as mf
from .manifolds import Euclidean, Grassmann, ManifoldPoint, Sphere
from .optim import PolynomialDecay, make_rng
from .oracles import fit_power_law
from .pca import oja_update, power_update, rsgd_update


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_frame(d: int, k: int, rng) -> ManifoldPoint:
    return ManifoldPoint.from_array(Grassmann(d, k), rng.standard_normal((d, k)))


def frame_at_angles(X: ManifoldPoint, theta, rng) -> ManifoldPoint:
    """A frame whose principal angles with ``X`` are ``theta``, randomly rotated."""
    d, k = X.manifold.d, X.manifold.k
    W = rng.standard_normal((d, k))
    W -= X.coords @ (X.coords.T @ W)
    U, _ = np.linalg.qr(W)
    Y = X.coords * np.cos(theta) + U * np.sin(theta)
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return ManifoldPoint.from_array(X.manifold, Y @ Q)


def _random_psd_rank_one(d, rng):
    """Rank-one ``h h^T`` scaled to operator norm in [0.1, 1]."""
    h = rng.standard_normal(d)
    return rng.uniform(0.1, 1.0) * np.outer(h, h) / (h @ h)


def update_equivalence(instances: int = 100, seed: int = 0,
                       gammas=(1e-1, 1e-2, 1e-3, 1e-4)) -> CheckResult:
    """Power, rsgd and orthonormalized Oja steps agree to second order in gamma."""
    rng = make_rng(seed, 0, purpose=10)
    gammas = np.asarray(gammas, dtype=float)
    gap_rsgd = np.zeros((instances, len(gammas)))
    gap_oja = np.zeros_like(gap_rsgd)
    for i in range(instances):
        d = int(rng.integers(3, 11))
        k = int(rng.integers(1, min(3, d - 1) + 1))
        X = random_frame(d, k, rng)
        H = _random_psd_rank_one(d, rng)
        for j, g in enumerate(gammas):
            P = power_update(X, H, g).coords
            gap_rsgd[i, j] = np.linalg.norm(P - rsgd_update(X, H, g).coords)
            O = ManifoldPoint.from_array(X.manifold, oja_update(X, H, g)).coords
            gap_oja[i, j] = np.linalg.norm(P - O)
    s1 = fit_power_law(gammas, gap_rsgd.mean(axis=0), n_min=0, min_points=len(gammas)).slope
    s2 = fit_power_law(gammas, gap_oja.mean(axis=0), n_min=0, min_points=len(gammas)).slope
    worst = min(
        min(fit_power_law(gammas, r, n_min=0, min_points=len(gammas)).slope for r in gap_rsgd),
        min(fit_power_law(gammas, r, n_min=0, min_points=len(gammas)).slope for r in gap_oja),
    )
    return CheckResult(
        "update equivalence", min(s1, s2) >= 1.9,
        f"slope of mean gap power-rsgd={s1:.3f} power-oja={s2:.3f} (need >= 1.9);"
        f" worst single instance {worst:.3f}",
    )


def distance_chain(pairs: int = 1000, seed: int = 0) -> CheckResult:
    """(pi/2) r >= (pi/2) d_F >= d_A >= r / sqrt 2 when every angle is at most pi/4."""
    rng = make_rng(seed, 0, purpose=11)
    bad = 0
    worst = np.inf
    for _ in range(pairs):
        d = int(rng.integers(2, 11))
        k = int(rng.integers(1, min(3, d // 2) + 1))
        X = random_frame(d, k, rng)
        Y = frame_at_angles(X, rng.uniform(0, np.pi / 4, k), rng)
        s = mf.subspace_distances(X, Y)
        r, dF, dA = s["retr_norm"], s["d_F"], s["d_A"]
        margins = (np.pi / 2 * r - np.pi / 2 * dF, np.pi / 2 * dF - dA, dA - r / np.sqrt(2))
        worst = min(worst, *margins)
        bad += any(m < -1e-12 for m in margins)
    return CheckResult("distance chain", bad == 0,
                       f"{bad} of {pairs} pairs violate a link; smallest margin {worst:.3g}")


def second_order_retraction(instances: int = 100, seed: int = 0, h: float = 1e-3) -> CheckResult:
    """Tangential part of the finite-difference acceleration of t -> R_x(t xi) vanishes."""
    rng = make_rng(seed, 0, purpose=12)
    worst = 0.0
    for i in range(instances):
        if i % 2 == 0:
            M = Sphere(int(rng.integers(2, 11)))
            x = ManifoldPoint.from_array(M, rng.standard_normal(M.d))
        else:
            d = int(rng.integers(3, 11))
            x = random_frame(d, int(rng.integers(1, min(3, d - 1) + 1)), rng)
        xi = mf.project_tangent(x, rng.standard_normal(x.manifold.shape))
        xi = xi * float(rng.uniform(0.2, 2.0) / xi.norm)
        acc = (mf.retract(x, xi * h).coords - 2 * x.coords + mf.retract(x, xi * -h).coords) / h**2
        ratio = mf.project_tangent(x, acc).norm / xi.norm**2
        worst = max(worst, ratio)
    return CheckResult("second-order retraction", worst <= 1e-4,
                       f"max tangential acceleration / |xi|^2 = {worst:.3g} (need <= 1e-4)")


def local_equivalence(instances: int = 100, seed: int = 0) -> CheckResult:
    """retr_norm / d_A is within 1% of one for nearby subspaces."""
    rng = make_rng(seed, 0, purpose=13)
    ratios = []
    for _ in range(instances):
        d = int(rng.integers(3, 11))
        X = random_frame(d, int(rng.integers(1, min(3, d - 1) + 1)), rng)
        theta = rng.uniform(0, 1e-2 / np.sqrt(X.manifold.k), X.manifold.k)
        s = mf.subspace_distances(X, frame_at_angles(X, theta, rng))
        if s["d_A"] > 0:
            ratios.append(s["retr_norm"] / s["d_A"])
    lo, hi = min(ratios), max(ratios)
    return CheckResult("local equivalence", 0.99 <= lo and hi <= 1.01,
                       f"retr_norm/d_A in [{lo:.6f}, {hi:.6f}]")


def rotation_invariance(instances: int = 100, seed: int = 0) -> CheckResult:
    """Subspace distances do not depend on the frame chosen for either subspace."""
    rng = make_rng(seed, 0, purpose=14)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(3, 11))
        k = int(rng.integers(1, min(3, d - 1) + 1))
        X = random_frame(d, k, rng)
        Y = frame_at_angles(X, rng.uniform(0, 1.2, k), rng)
        Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
        Yr = ManifoldPoint(Y.manifold, Y.coords @ Q)
        a, b = mf.subspace_distances(X, Y), mf.subspace_distances(X, Yr)
        worst = max(worst, *(abs(a[key] - b[key]) for key in a))
    return CheckResult("rotation invariance", worst <= 1e-9, f"max change {worst:.3g}")


def retraction_convexity(instances: int = 100, seed: int = 0, h: float = 1e-3) -> CheckResult:
    """g(t) = |R^{-1}_{x*}(R_y(t v))|^2 has non-negative curvature at t = 0 (k = 1)."""
    rng = make_rng(seed, 0, purpose=15)
    bad = 0
    for _ in range(instances):
        d = int(rng.integers(2, 11))
        Xs = random_frame(d, 1, rng)
        Y = frame_at_angles(Xs, np.array([rng.uniform(0, np.arccos(0.95))]), rng)
        V = mf.project_tangent(Y, rng.standard_normal((d, 1)))
        V = V * (1.0 / V.norm)

        def g(t):
            return mf.inverse_retract(Xs, mf.retract(Y, V * t)).norm ** 2

        bad += (g(h) - 2 * g(0.0) + g(-h)) / h**2 < 0
    return CheckResult("retraction convexity", bad == 0, f"{bad} of {instances} negative")


def euclidean_average(seed: int = 0, n_iters: int = 500) -> CheckResult:
    """On R^d the streaming average is the arithmetic mean of the iterates."""
    from .optim import QuadraticOracle, sgd_step, streaming_average_step

    rng = make_rng(seed, 0, purpose=16)
    oracle = QuadraticOracle(np.array([1.0, 2.0, 0.5]))
    sched = PolynomialDecay(1.0, 0.5)
    M = Euclidean(3)
    x = ManifoldPoint(M, np.ones(3))
    xt, total, worst = x, np.zeros(3), 0.0
    for n in range(1, n_iters + 1):
        x = sgd_step(x, oracle.sample(x, rng), sched.C * n ** -sched.alpha)
        xt = streaming_average_step(xt, x, n)
        total += x.coords
        worst = max(worst, np.abs(xt.coords - total / n).max())
    return CheckResult("euclidean average", worst <= 1e-12, f"max deviation {worst:.3g}")


SUITES = (
    update_equivalence,
    distance_chain,
    second_order_retraction,
    local_equivalence,
    rotation_invariance,
    retraction_convexity,
    euclidean_average,
)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [suite(seed=seed) for suite in SUITES]
