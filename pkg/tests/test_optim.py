import numpy as np
import pytest
from hypothesis import given, strategies as st

from riemann_avg import manifolds as mf
from riemann_avg.engine import run_quadratic_batch
from riemann_avg.errors import AveragingDomainError, DomainError, PreconditionError
from riemann_avg.manifolds import Euclidean, ManifoldPoint, Sphere
from riemann_avg.optim import (
    Constant,
    PolynomialDecay,
    QuadraticOracle,
    Trajectory,
    geometric_grid,
    linear_grid,
    make_rng,
    mean_trajectory,
    run_sgd,
    sgd_step,
    step_size,
    step_sizes,
    streaming_average_step,
)
from riemann_avg.oracles import fit_loglog_slope
from riemann_avg.sphere import SphereMeanOracle, SphereMeanProblem

from conftest import rand_sphere, seeds


def ept(*c):
    return ManifoldPoint(Euclidean(len(c)), np.array(c, dtype=float))


class TestSchedules:
    def test_examples(self):
        assert step_size(PolynomialDecay(2, 0.5), 4) == 1.0
        assert step_size(PolynomialDecay(1, 1), 10) == pytest.approx(0.1)
        assert all(step_size(Constant(0.05), n) == 0.05 for n in (1, 7, 10**6))

    def test_zero_index(self):
        with pytest.raises(DomainError):
            step_size(PolynomialDecay(1, 0.5), 0)
        with pytest.raises(DomainError):
            step_sizes(Constant(1.0), 0, 3)

    @pytest.mark.parametrize("C,alpha", [(0, 0.5), (-1, 0.5), (1, 0), (1, 1.5)])
    def test_invalid(self, C, alpha):
        with pytest.raises(PreconditionError):
            PolynomialDecay(C, alpha)

    def test_invalid_constant(self):
        with pytest.raises(PreconditionError):
            Constant(0.0)

    @given(st.floats(0.01, 10), st.floats(0.05, 1.0))
    def test_strictly_decreasing(self, C, alpha):
        g = step_sizes(PolynomialDecay(C, alpha), 1, 500)
        assert np.all(np.diff(g) < 0)
        assert g[9] == pytest.approx(step_size(PolynomialDecay(C, alpha), 10))

    def test_labels(self):
        assert PolynomialDecay(1.0, 0.5).label == "poly_C1_a0.5"
        assert Constant(0.01).label == "const_g0.01"


class TestSteps:
    def test_zero_gradient(self):
        x = rand_sphere(np.random.default_rng(0), 4)
        np.testing.assert_allclose(sgd_step(x, np.zeros(4), 0.3).coords, x.coords)

    def test_euclidean_reduction(self):
        assert sgd_step(ept(4.0), np.array([2.0]), 0.5).coords[0] == 3.0

    @given(seeds, st.integers(2, 8), st.floats(0.001, 2.0))
    def test_sphere_stays_on_sphere(self, seed, d, gamma):
        rng = np.random.default_rng(seed)
        x = rand_sphere(rng, d)
        g = mf.project_tangent(x, rng.standard_normal(d))
        assert np.linalg.norm(sgd_step(x, g, gamma).coords) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(sgd_step(x, g, gamma, use_exp=True).coords) == pytest.approx(1.0, abs=1e-12)

    def test_average_fixed_point(self):
        x = rand_sphere(np.random.default_rng(1), 3)
        np.testing.assert_allclose(streaming_average_step(x, x, 5).coords, x.coords, atol=1e-15)

    def test_average_first_step(self):
        rng = np.random.default_rng(2)
        a, b = rand_sphere(rng, 3), rand_sphere(rng, 3)
        if a.coords @ b.coords < 0:
            b = ManifoldPoint(b.manifold, -b.coords)
        np.testing.assert_allclose(streaming_average_step(a, b, 1).coords, b.coords, atol=1e-12)

    def test_euclidean_running_mean(self):
        xt = ept(0.0)
        got = []
        for n, v in enumerate([1.0, 3.0, 5.0], start=1):
            xt = streaming_average_step(xt, ept(v), n)
            got.append(xt.coords[0])
        assert got == [1.0, 2.0, 3.0]

    def test_average_domain_error(self):
        x = ManifoldPoint(Sphere(2), np.array([1.0, 0.0]))
        y = ManifoldPoint(Sphere(2), np.array([-0.6, 0.8]))
        with pytest.raises(AveragingDomainError) as info:
            streaming_average_step(x, y, 7)
        assert info.value.iteration == 7
        assert "iteration 7" in str(info.value)


class TestGrids:
    def test_geometric(self):
        g = geometric_grid(1000, 1)
        np.testing.assert_array_equal(g, [0, 1, 10, 100, 1000])
        g = geometric_grid(12345, 10)
        assert g[0] == 0 and g[-1] == 12345 and np.all(np.diff(g) > 0)

    def test_linear(self):
        np.testing.assert_array_equal(linear_grid(10, 5), [0, 5, 10])

    def test_record_every_beyond_horizon(self):
        t = run_sgd(QuadraticOracle(np.ones(2)), ept(1.0, 1.0), Constant(0.1), 5, seed=0,
                    record_every=10, grid="linear")
        np.testing.assert_array_equal(t.iters, [0])
        assert t.err_sgd[0] == 2.0


class TestTrajectory:
    def test_read_only(self):
        t = Trajectory([0, 1], [0, 1], [1, 0.5], [1, 0.5], seed=0, metric_id="m")
        with pytest.raises(ValueError):
            t.err_avg[0] = 3.0

    def test_lengths(self):
        with pytest.raises(PreconditionError):
            Trajectory([0, 1], [0], [1, 0.5], [1, 0.5], seed=0, metric_id="m")

    def test_increasing(self):
        with pytest.raises(PreconditionError):
            Trajectory([0, 0], [0, 0], [1, 1], [1, 1], seed=0, metric_id="m")

    def test_mean(self):
        a = Trajectory([0, 1], [0, 1], [1.0, 3.0], [2.0, 2.0], seed=0, metric_id="m")
        b = Trajectory([0, 1], [0, 1], [3.0, 5.0], [4.0, 0.0], seed=1, metric_id="m")
        m = mean_trajectory([a, b])
        np.testing.assert_array_equal(m.err_sgd, [2.0, 4.0])
        np.testing.assert_array_equal(m.err_avg, [3.0, 1.0])
        assert mean_trajectory([a]) is a


def reference_quadratic(hd, sd, x0, schedule, n_iters, rng):
    """Flat-array SGD with a running sum; draws noise exactly as the oracle does."""
    x = np.array(x0, dtype=float)
    total = np.zeros_like(x)
    xs, avgs = [], []
    for n in range(1, n_iters + 1):
        x = x - step_size(schedule, n) * (hd * x + sd * rng.standard_normal(x.size))
        total += x
        xs.append(x.copy())
        avgs.append(total / n)
    return np.array(xs), np.array(avgs)


class TestRunSgd:
    oracle = QuadraticOracle(np.array([1.0, 0.5, 2.0]))
    sched = PolynomialDecay(1.0, 0.5)

    def test_deterministic(self):
        a = run_sgd(self.oracle, ept(1, 1, 1), self.sched, 300, seed=9)
        b = run_sgd(self.oracle, ept(1, 1, 1), self.sched, 300, seed=9)
        c = run_sgd(self.oracle, ept(1, 1, 1), self.sched, 300, seed=10)
        assert a.same_as(b) and not a.same_as(c)

    def test_matches_reference(self):
        t = run_sgd(self.oracle, ept(1, 1, 1), self.sched, 400, seed=3, record_every=1, grid="linear")
        xs, avgs = reference_quadratic(self.oracle.hessian_diag, 1.0, [1, 1, 1], self.sched, 400,
                                       make_rng(3, 0))
        np.testing.assert_allclose(t.err_sgd[1:], np.sum(xs**2, axis=1), rtol=1e-12)
        # averaged iterate equals the arithmetic mean of the iterates
        np.testing.assert_allclose(t.err_avg[1:], np.sum(avgs**2, axis=1), rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(t.extras["x_tilde_final"].coords, avgs[-1], atol=1e-12)

    def test_batch_engine_matches_reference(self):
        res = run_quadratic_batch(self.oracle, self.sched, 5000, seed=4, run_indices=[0, 2])
        for t, r in zip(res.trajectories, [0, 2]):
            xs, avgs = reference_quadratic(self.oracle.hessian_diag, 1.0, [1, 1, 1], self.sched,
                                           5000, make_rng(4, r))
            idx = t.iters[1:] - 1
            np.testing.assert_allclose(t.err_sgd[1:], np.sum(xs[idx] ** 2, axis=1), rtol=1e-9)
            np.testing.assert_allclose(t.err_avg[1:], np.sum(avgs[idx] ** 2, axis=1), rtol=1e-9)

    def test_polyak_ruppert_slope(self):
        oracle = QuadraticOracle(np.ones(5))
        res = run_quadratic_batch(oracle, self.sched, 100_000, seed=0, run_indices=range(20))
        m = mean_trajectory(res.trajectories)
        s = fit_loglog_slope(m, "err_avg", n_min=1000).slope
        assert -1.2 <= s <= -0.8

    def test_sphere_average_bounded(self):
        # err_avg(n) never exceeds the largest err_sgd seen so far (up to 5%)
        problem = SphereMeanProblem.standard(3, 0.1)
        oracle = SphereMeanOracle(problem)
        x0 = mf.exp_map(problem.mu_point, np.array([0.0, 0.2, 0.1]))
        t = run_sgd(oracle, x0, PolynomialDecay(0.2, 0.5), 2000, seed=5, record_every=1,
                    grid="linear", use_exp=True)
        assert np.sqrt(t.err_sgd.max()) < 0.5
        running = np.maximum.accumulate(t.err_sgd)
        assert np.all(t.err_avg <= 1.05 * running + 1e-15)

    def test_oracle_unbiased(self):
        oracle = QuadraticOracle(np.array([1.0, 2.0]), noise_std=0.5)
        x = ept(0.3, -0.4)
        rng = make_rng(0)
        g = np.array([oracle.sample(x, rng).vec for _ in range(10_000)])
        se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
        assert np.all(np.abs(g.mean(axis=0) - oracle.exact_gradient(x).vec) <= 5 * se)


class TestRng:
    def test_independent_streams(self):
        a = make_rng(1, 0).standard_normal(5)
        assert not np.array_equal(a, make_rng(1, 1).standard_normal(5))
        assert not np.array_equal(a, make_rng(1, 0, purpose=1).standard_normal(5))
        np.testing.assert_array_equal(a, make_rng(1, 0).standard_normal(5))

    def test_chunked_equals_stepwise(self):
        a = make_rng(5).standard_normal((7, 3))
        g = make_rng(5)
        b = np.stack([g.standard_normal(3) for _ in range(7)])
        np.testing.assert_array_equal(a, b)
