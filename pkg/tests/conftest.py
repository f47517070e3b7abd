# tests/conftest.py
import os
import sys
import shutil
import tempfile

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.loadConfig import Hyperparams
from src.parseEvents import synthetic_datasets
from src.snnNetwork import init_network, parse_architecture


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run slow acceptance-scale training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale training runs (need --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def temp_test_dir():
    test_dir = tempfile.mkdtemp()
    yield test_dir
    if os.path.exists(test_dir):
        shutil.rmtree(test_dir)


@pytest.fixture
def tiny_hp():
    """A synthetic task small enough to train in well under a second per epoch."""
    return Hyperparams(
        architecture="12-6-2",
        time_steps=15,
        epochs=2,
        batch_size=4,
        synthetic_neurons=12,
        synthetic_classes=2,
        synthetic_train_per_class=6,
        synthetic_test_per_class=3,
    )


@pytest.fixture
def tiny_net(tiny_hp):
    return init_network(parse_architecture(tiny_hp.architecture), tiny_hp, tiny_hp.seed)


@pytest.fixture
def tiny_data(tiny_hp):
    return synthetic_datasets(tiny_hp)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
