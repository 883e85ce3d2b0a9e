import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlsteklov.geometry import Circle, build_mesh

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def disk_mesh():
    return build_mesh(Circle(), 0.05)


@pytest.fixture(scope="session")
def disk_mesh_fine():
    return build_mesh(Circle(), 0.025)


@pytest.fixture(scope="session")
def annulus_mesh():
    return build_mesh(Circle((2.0, 0.0), 1.0), 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def disk_mesh_sym():
    """Mesh invariant under rotation by pi/4, so the disk's double eigenvalues stay exactly double."""
    return build_mesh(Circle(), 0.05, symmetry=8)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
