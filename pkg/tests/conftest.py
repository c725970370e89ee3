import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from riemann_avg.manifolds import Grassmann, ManifoldPoint, Sphere

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@st.composite
def grassmann_dims(draw, d_max=10, k_max=3):
    d = draw(st.integers(2, d_max))
    k = draw(st.integers(1, min(k_max, d - 1)))
    return d, k


def rand_frame(rng, d, k):
    return ManifoldPoint.from_array(Grassmann(d, k), rng.standard_normal((d, k)))


def rand_sphere(rng, d):
    return ManifoldPoint.from_array(Sphere(d), rng.standard_normal(d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
