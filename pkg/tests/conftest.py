import numpy as np
import pytest

from fluxlab.mesh import build_structured


@pytest.fixture(scope="session")
def mesh8():
    return build_structured(8)


@pytest.fixture(scope="session")
def mesh16():
    return build_structured(16)


@pytest.fixture(scope="session")
def mesh32():
    return build_structured(32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_interior_field(mesh, rng, count=None):
    """Random nodal vectors vanishing on the boundary."""
    shape = (mesh.n_vertices,) if count is None else (mesh.n_vertices, count)
    u = rng.standard_normal(shape)
    u[mesh.boundary_mask] = 0.0
    return u


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
