import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from acdg.dg_space import DgSpace
from acdg.mesh import build_square_mesh

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def mesh4():
    return build_square_mesh((-1, 1, -1, 1), 4)


@pytest.fixture(scope="session", params=[1, 2], ids=["P1", "P2"])
def space4(request, mesh4):
    return DgSpace(mesh4, request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.acceptance_lines[number] = line
        print(line)
        return passed

    return record
