import pytest
import tempfile
import json
from pathlib import Path

import numpy as np

from ionlink.purify import NoiseModel
from ionlink.qcore import DensityMatrix
from ionlink.stabtool import build_table


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long Monte Carlo tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def device_noise():
    """eps = 0.1 with p1 = 1e-6, p2 = 1e-3, pm = 5e-4"""
    return NoiseModel.ion_trap(0.1)


@pytest.fixture
def chain_noise():
    """Repeater chain rates: no single-qubit or measurement errors"""
    return NoiseModel(epsilon=0.1, p1=0.0, p2=1e-3, pm=0.0)


@pytest.fixture
def noiseless():
    return NoiseModel.noiseless()


@pytest.fixture(scope="session")
def level1_tables():
    """Method (a) Level 1 tables at eps = 0.1, shared across the toric tests"""
    noise = NoiseModel.ion_trap(0.1)
    return build_table("a", 1, noise, "Z"), build_table("a", 1, noise, "X")


@pytest.fixture
def config_file(temp_dir):
    def write(data):
        path = temp_dir / "experiment.json"
        with open(path, 'w') as f:
            json.dump(data, f)
        return path
    return write


@pytest.fixture
def random_state(rng):
    """Mixed states from the Hilbert-Schmidt measure, drawn from the shared generator"""
    def draw(num_qubits):
        dim = 2 ** num_qubits
        g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        rho = g @ g.conj().T
        return DensityMatrix(rho / np.trace(rho).real)
    return draw
