import numpy as np
import pytest

from posegraph_vo.lie import se3_exp


def random_pose(rng, trans=1.0, max_angle=np.pi - 1e-3):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    phi = axis * rng.uniform(0.0, max_angle)
    return se3_exp(np.concatenate([rng.normal(size=3) * trans, phi]))


def twist_matrix(xi):
    """4x4 se(3) element for a [rho, phi] twist."""
    rho, phi = xi[:3], xi[3:]
    A = np.zeros((4, 4))
    A[:3, :3] = [[0, -phi[2], phi[1]], [phi[2], 0, -phi[0]], [-phi[1], phi[0], 0]]
    A[:3, 3] = rho
    return A


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_pose():
    return random_pose


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_lines(request):
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
