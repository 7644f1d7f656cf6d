import os

import numpy as np
import pytest

from stochprune import data, nn

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def desk_root(tmp_path_factory):
    root = os.environ.get(data.DATA_ENV) or str(tmp_path_factory.mktemp("desk"))
    data.load_desk(root)
    return root


@pytest.fixture(scope="session")
def desk(desk_root):
    """Standardized desk train/test pair, built once per session."""
    return data.load_desk(desk_root)


@pytest.fixture
def tiny_net():
    return nn.init_dense((4, 8, 3), seed=3)


@pytest.fixture
def tiny_data():
    g = np.random.default_rng(11)
    x = g.standard_normal((16, 4))
    y = g.integers(0, 3, 16)
    return x, y


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
