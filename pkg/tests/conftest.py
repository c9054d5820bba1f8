import numpy as np
import pytest

from toyedit import autograd as ag
from toyedit import diffusion as D
from toyedit import model as M


@pytest.fixture(autouse=True)
def _debug_checks():
    ag.set_debug_checks(True)
    yield
    ag.set_debug_checks(False)


@pytest.fixture(scope="session")
def tiny_config():
    return M.ModelConfig(d_model=16, n_heads=2, n_layers=1)


@pytest.fixture(scope="session")
def tiny_params(tiny_config):
    rng = np.random.default_rng(7)
    return M.init_params(tiny_config, rng, zero_init=False, scale=0.05)


@pytest.fixture(scope="session")
def default_config():
    return M.ModelConfig()


@pytest.fixture(scope="session")
def default_params(default_config):
    rng = np.random.default_rng(11)
    return M.init_params(default_config, rng, zero_init=False, scale=0.05)


@pytest.fixture(scope="session")
def schedule():
    return D.make_schedule()
