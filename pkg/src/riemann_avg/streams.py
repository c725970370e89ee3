"""Synthetic matrix streams for streaming PCA.

Three stream kinds are provided:

* ``rank_one_gaussian``: ``H_n = h h^T`` with ``h = H^{1/2} g``, ``g ~ N(0, I)``.
* ``counterexample``: the planar rank-one stream on which averaged SGD with a
  constant step size does not converge to the top eigenvector.
* ``fixed``: ``H_n = H`` at every step (noiseless power iteration).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, PreconditionError
from .optim import make_rng
from .pca import PcaProblem

_A2 = (1.0 - 1.0 / np.pi) / 2.0  # squared scale of the first coordinate
_B2 = (1.0 + 1.0 / np.pi) / 2.0


@dataclass(frozen=True)
class SpectrumSpec:
    """Eigenvalues ``1/i^alpha + beta`` for ``i <= k`` and ``1/(i-1)^alpha`` for ``i > k``."""

    d: int
    k: int
    alpha_spec: float
    beta_spec: float
    eigvecs: str = "identity"
    eigvec_seed: int = 0

    def __post_init__(self):
        if self.d < self.k + 1 or self.k < 1:
            raise DimensionError(f"need 1 <= k < d, got d={self.d}, k={self.k}")
        if self.alpha_spec < 0 or self.beta_spec < 0:
            raise PreconditionError("alpha_spec and beta_spec must be non-negative")
        if self.eigvecs not in ("identity", "random"):
            raise PreconditionError(f"eigvecs must be 'identity' or 'random', got {self.eigvecs!r}")

    def eigenvalues(self) -> np.ndarray:
        top = np.arange(1, self.k + 1, dtype=float)
        rest = np.arange(self.k + 1, self.d + 1, dtype=float)
        return np.concatenate([
            top ** (-self.alpha_spec) + self.beta_spec,
            (rest - 1.0) ** (-self.alpha_spec),
        ])


def haar_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian with sign correction)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def make_covariance(spec: SpectrumSpec) -> dict:
    """Covariance ``H = V diag(lambda) V^T`` and its PCA problem.

    Raises:
        PreconditionError: if the spectrum is not non-increasing or has no
            gap between positions k and k+1.
    """
    lam = spec.eigenvalues()
    if np.any(np.diff(lam) > 0):
        raise PreconditionError(f"spectrum is not non-increasing: {lam}")
    if not lam[spec.k - 1] > lam[spec.k]:
        raise PreconditionError("spectrum has no gap between eigenvalues k and k+1")
    if spec.eigvecs == "identity":
        V = np.eye(spec.d)
    else:
        V = haar_orthogonal(spec.d, make_rng(spec.eigvec_seed, 0, purpose=2))
    H = (V * lam) @ V.T
    H = 0.5 * (H + H.T)
    problem = PcaProblem.from_matrix(H, spec.k, eigvals=lam, eigvecs=V)
    return {"H": H, "problem": problem, "eigengap": float(lam[spec.k - 1] - lam[spec.k])}


def _sqrt_psd(H: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh(H)
    return (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T


def counterexample_mean() -> np.ndarray:
    """Exact ``E[h h^T]`` of the planar counterexample stream.

    Uses ``E cos(2t) = cos(2m) exp(-2 s^2)`` and ``E sin(2t) = sin(2m) exp(-2 s^2)``
    for ``t ~ N(m, s^2)`` on each of the two mixture components.
    """
    comps = [(-np.pi / 2, np.pi / 2), (np.pi / 4, np.pi / 4)]
    c2 = np.mean([np.cos(2 * m) * np.exp(-2 * s * s) for m, s in comps])
    s2 = np.mean([np.sin(2 * m) * np.exp(-2 * s * s) for m, s in comps])
    ecc, ess, ecs = (1 + c2) / 2, (1 - c2) / 2, s2 / 2
    off = ecs / np.sqrt(_A2 * _B2)
    return np.array([[ecc / _A2, off], [off, ess / _B2]])


def counterexample_claimed_eigenvalues() -> np.ndarray:
    """The eigenvalues ``(1 +- 1/pi)/4`` quoted for this stream, largest first."""
    return np.array([(1 + 1 / np.pi) / 4, (1 - 1 / np.pi) / 4])


@dataclass(frozen=True)
class MatrixStream:
    """Seeded generator of i.i.d. symmetric matrices with known mean.

    The stream itself is stateless: :meth:`rng` hands out one independent
    generator per replicate, and :meth:`sample` draws from a given generator.
    """

    kind: str
    matrix: np.ndarray = field(repr=False)
    seed: int = 0
    factor: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("rank_one_gaussian", "counterexample", "fixed"):
            raise PreconditionError(f"unknown stream kind {self.kind!r}")
        m = np.array(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.kind == "rank_one_gaussian" and self.factor is None:
            f = _sqrt_psd(m)
            f.setflags(write=False)
            object.__setattr__(self, "factor", f)

    @classmethod
    def rank_one_gaussian(cls, H, seed: int = 0) -> "MatrixStream":
        return cls("rank_one_gaussian", H, seed)

    @classmethod
    def counterexample(cls, seed: int = 0) -> "MatrixStream":
        return cls("counterexample", counterexample_mean(), seed)

    @classmethod
    def fixed(cls, H, seed: int = 0) -> "MatrixStream":
        return cls("fixed", H, seed)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def mean(self) -> np.ndarray:
        """``E[H_n]``."""
        return self.matrix

    @property
    def is_rank_one(self) -> bool:
        return self.kind != "fixed"

    def rng(self, run_index: int = 0) -> np.random.Generator:
        return make_rng(self.seed, run_index)

    def clone(self, seed: int) -> "MatrixStream":
        return MatrixStream(self.kind, self.matrix, seed, self.factor)

    def sample_factors(self, rng: np.random.Generator, size: int) -> np.ndarray | None:
        """``size`` consecutive vectors ``h_n`` as rows, or None for a fixed stream.

        Drawing ``m`` rows at once consumes the generator exactly like ``m``
        single draws, so chunked and step-by-step runs see the same data.
        """
        if self.kind == "fixed":
            return None
        if self.kind == "rank_one_gaussian":
            return rng.standard_normal((size, self.d)) @ self.factor.T
        z = rng.standard_normal((size, 3))
        # tau ~ Bernoulli(1/2) from the sign of an independent normal
        theta = np.where(
            z[:, 2] > 0,
            -np.pi / 2 + (np.pi / 2) * z[:, 0],
            np.pi / 4 + (np.pi / 4) * z[:, 1],
        )
        return np.stack([np.cos(theta) / np.sqrt(_A2), np.sin(theta) / np.sqrt(_B2)], axis=1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "fixed":
            return self.matrix.copy()
        h = self.sample_factors(rng, 1)[0]
        return np.outer(h, h)


def sample_stream(stream: MatrixStream, rng: np.random.Generator) -> np.ndarray:
    return stream.sample(rng)


def empirical_mean(stream: MatrixStream, n: int, rng: np.random.Generator) -> dict:
    """Monte Carlo mean of ``n`` draws with entrywise standard errors."""
    h = stream.sample_factors(rng, n)
    if h is None:
        return {"mean": stream.matrix.copy(), "stderr": np.zeros_like(stream.matrix)}
    outer = h[:, :, None] * h[:, None, :]
    return {
        "mean": outer.mean(axis=0),
        "stderr": outer.std(axis=0, ddof=1) / np.sqrt(n),
    }
