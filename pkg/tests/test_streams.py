import numpy as np
import pytest

from riemann_avg.errors import DimensionError, PreconditionError
from riemann_avg.optim import make_rng
from riemann_avg.streams import (
    MatrixStream,
    SpectrumSpec,
    counterexample_claimed_eigenvalues,
    counterexample_mean,
    empirical_mean,
    haar_orthogonal,
    make_covariance,
)


class TestSpectrum:
    def test_values(self):
        lam = SpectrumSpec(5, 2, 1.0, 0.2).eigenvalues()
        np.testing.assert_allclose(lam, [1.2, 0.7, 0.5, 1 / 3, 0.25])

    def test_example(self):
        lam = SpectrumSpec(4, 2, 1.0, 0.5).eigenvalues()
        np.testing.assert_allclose(lam, [1.5, 1.0, 0.5, 1 / 3])

    def test_identity_x_star(self):
        p = make_covariance(SpectrumSpec(5, 2, 1.0, 0.5))["problem"]
        np.testing.assert_array_equal(p.X_star.coords, np.eye(5)[:, :2])

    def test_dims(self):
        with pytest.raises(DimensionError):
            SpectrumSpec(3, 3, 1.0, 0.1)

    def test_zero_gap(self):
        with pytest.raises(PreconditionError):
            make_covariance(SpectrumSpec(4, 2, 0.0, 0.0))

    def test_identity_eigvecs(self):
        cov = make_covariance(SpectrumSpec(4, 1, 1.0, 0.2))
        np.testing.assert_allclose(cov["H"], np.diag(SpectrumSpec(4, 1, 1.0, 0.2).eigenvalues()))
        assert cov["eigengap"] == pytest.approx(0.2)

    def test_random_eigvecs(self):
        spec = SpectrumSpec(6, 2, 1.0, 0.1, eigvecs="random", eigvec_seed=4)
        cov = make_covariance(spec)
        p = cov["problem"]
        np.testing.assert_allclose(cov["H"] @ p.eigvecs, p.eigvecs * p.eigvals, atol=1e-12)
        np.testing.assert_allclose(np.linalg.eigvalsh(cov["H"])[::-1], spec.eigenvalues(), atol=1e-12)
        assert np.array_equal(make_covariance(spec)["H"], cov["H"])

    def test_haar(self):
        Q = haar_orthogonal(5, make_rng(0))
        np.testing.assert_allclose(Q.T @ Q, np.eye(5), atol=1e-12)


class TestStreams:
    def test_rank_one_mean(self):
        H = make_covariance(SpectrumSpec(4, 1, 1.0, 0.2, eigvecs="random"))["H"]
        s = MatrixStream.rank_one_gaussian(H, seed=1)
        est = empirical_mean(s, 100_000, s.rng(0))
        z = np.abs(est["mean"] - H) / est["stderr"]
        assert z.max() < 5

    def test_samples_rank_one(self):
        s = MatrixStream.counterexample(0)
        assert s.d == 2
        g = s.rng(0)
        for _ in range(20):
            M = s.sample(g)
            h = np.sqrt(np.diag(M))
            assert np.linalg.matrix_rank(M) == 1 and np.allclose(M, M.T)
            assert np.trace(M) == pytest.approx(h[0] ** 2 + h[1] ** 2)

    def test_fixed(self):
        H = np.diag([2.0, 1.0])
        s = MatrixStream.fixed(H)
        assert not s.is_rank_one and s.sample_factors(s.rng(), 3) is None
        np.testing.assert_array_equal(s.sample(s.rng()), H)

    def test_unknown_kind(self):
        with pytest.raises(PreconditionError):
            MatrixStream("wishart", np.eye(2))

    def test_deterministic_and_clone(self):
        s = MatrixStream.counterexample(3)
        a = s.sample_factors(s.rng(1), 10)
        np.testing.assert_array_equal(a, s.sample_factors(s.rng(1), 10))
        assert not np.array_equal(a, s.clone(4).sample_factors(s.clone(4).rng(1), 10))

    def test_chunked_equals_single(self):
        s = MatrixStream.counterexample(0)
        a = s.sample_factors(s.rng(), 50)
        g = s.rng()
        b = np.concatenate([s.sample_factors(g, 1) for _ in range(50)])
        np.testing.assert_array_equal(a, b)


class TestCounterexample:
    def test_analytic_mean_matches_monte_carlo(self):
        s = MatrixStream.counterexample(0)
        est = empirical_mean(s, 1_000_000, s.rng(0))
        z = np.abs(est["mean"] - counterexample_mean()) / est["stderr"]
        assert z.max() < 5

    def test_claimed_values(self):
        np.testing.assert_allclose(counterexample_claimed_eigenvalues(),
                                   [(1 + 1 / np.pi) / 4, (1 - 1 / np.pi) / 4])

    def test_mean_is_valid_covariance(self):
        M = counterexample_mean()
        assert np.allclose(M, M.T) and np.linalg.eigvalsh(M).min() > 0
