import numpy as np
import pytest

from cadstretch.camera import Intrinsics
from cadstretch.harness.zoo import load_zoo
from cadstretch.mesh import box_mesh


@pytest.fixture(scope="session")
def zoo():
    return load_zoo()


@pytest.fixture
def k():
    return Intrinsics.square()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_cube():
    return box_mesh((0, 0, 0), (1, 1, 1), "cube")


@pytest.fixture
def centered_cube():
    return box_mesh((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5), "cube")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
