import numpy as np
import pytest

from latticeops.generator import CoefficientField, GeneratorMatrix, build_diffusion_generator
from latticeops.lattice import build_lattice


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_generator(rng, n, scale=1.0):
    """Dense conserving rate matrix with strictly positive off-diagonals."""
    q = rng.uniform(0.1, 1.0, (n, n)) * scale
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return GeneratorMatrix(q)


def random_stochastic(rng, n):
    u = rng.uniform(0.0, 1.0, (n, n))
    return u / u.sum(axis=1, keepdims=True)


@pytest.fixture
def reflecting_diffusion():
    lat = build_lattice(-1.0, 2.0, 9, "reflecting")
    return build_diffusion_generator(lat, CoefficientField.constant(0.1, 0.5))


# ---------------------------------------------------------------- acceptance reporting

AUDIT_TEST = "test_criterion_3_stochasticity_audit"
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_collection_modifyitems(session, config, items):
    # the stochasticity audit inspects every propagator built during the session, so it runs last
    last = [it for it in items if it.name == AUDIT_TEST]
    items[:] = [it for it in items if it.name != AUDIT_TEST] + last


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[num])
