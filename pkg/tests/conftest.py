import os
from importlib import resources

import numpy as np
import pytest

from iss_smallgain.network import example_network


@pytest.fixture
def data_dir():
    return str(resources.files("iss_smallgain") / "data")


@pytest.fixture
def mixed_path(data_dir):
    return os.path.join(data_dir, "example_mixed.ganet")


@pytest.fixture
def net():
    """Example network with the raw 0.9 coupling gains."""
    return example_network()


@pytest.fixture
def net_folded():
    """Example network with (id + 0.1*id) folded into the max-row gains."""
    return example_network(eta=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(int(os.environ.get("ISS_SG_SEED", "0")))


_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def acceptance_lines(request):
    return request.config.stash[_LINES]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
