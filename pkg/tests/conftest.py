import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from partialfm.bench.shapes import capsule, icosphere, normalize_area
from partialfm.bench.synth import gen_cut

settings.register_profile("pkg", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "pkg"))


@pytest.fixture(scope="session")
def sphere2():
    """162-vertex icosphere of unit area."""
    return normalize_area(icosphere(2))


@pytest.fixture(scope="session")
def sphere3():
    return normalize_area(icosphere(3))


@pytest.fixture(scope="session")
def capsule_mesh():
    return normalize_area(capsule())


@pytest.fixture(scope="session")
def cut_pair(capsule_mesh):
    return gen_cut(capsule_mesh, 11, 0.4, base="capsule")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from .acceptance_log import LINES
    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
