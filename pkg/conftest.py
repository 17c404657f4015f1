"""Shared pytest configuration: the --runslow switch for long training runs."""

import numpy as np
import pytest

from roadmamba.autograd import set_default_dtype


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow training tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _reset_default_dtype():
    """Every test starts (and leaves) the global tensor dtype at float32."""
    set_default_dtype(np.float32)
    yield
    set_default_dtype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
