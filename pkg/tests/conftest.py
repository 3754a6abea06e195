import numpy as np
import pytest

from tofloc.environment import build_cuboid_map
from tofloc.registration import NnIndex


@pytest.fixture(scope="session")
def env():
    return build_cuboid_map(seed=7)


@pytest.fixture(scope="session")
def map_index(env):
    return NnIndex(env.model_cloud)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


_CRITERIA = {}


def record_criterion(n, ok, detail):
    _CRITERIA[n] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
