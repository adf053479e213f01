import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from liftpde import DomainShape, SchemeParams, ValueField, build_grid, quadrature_weights, solve_fixed_point
from liftpde.verify import linear_ramp

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("repo")


def solved(shape, F, p, eps, ratio, **kw):
    grid = build_grid(shape, eps / ratio, eps)
    weights = quadrature_weights(grid)
    params = SchemeParams.for_grid(p, grid, **kw)
    res = solve_fixed_point(ValueField.from_boundary(grid, F), params, weights)
    return grid, weights, params, res


@pytest.fixture(scope="session")
def unit_interval():
    return DomainShape.box([0.0], [1.0])


@pytest.fixture(scope="session")
def ramp_p3(unit_interval):
    """1-D ramp, p=3, eps=0.1, h=eps/8, solved."""
    return solved(unit_interval, linear_ramp(unit_interval).boundary, 3.0, 0.1, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
