import numpy as np
import pytest

from rdexpand.config import default_config, doubling_config
from rdexpand.driving import SymbolParams, periodic_path, sample_path
from rdexpand.measures import MeasureStack
from rdexpand.observables import cosine_observable
from rdexpand.operators import OperatorFamily

TWO = SymbolParams(d=2)
THREE = SymbolParams(d=3, b=0.1)


def make_stack(cfg, path, hi, lo=0):
    fam = OperatorFamily(path, cfg.M, cfg.make_observable())
    return MeasureStack(path, lo, hi, M=cfg.M, n_relax=cfg.n_relax, family=fam)


@pytest.fixture(scope="session")
def doubling():
    cfg = doubling_config()
    return cfg, cfg.path()


@pytest.fixture(scope="session")
def doubling_stack(doubling):
    cfg, path = doubling
    return make_stack(cfg, path, 4096)


@pytest.fixture(scope="session")
def default():
    cfg = default_config()
    return cfg, cfg.path()


@pytest.fixture(scope="session")
def default_stack(default):
    cfg, path = default
    return make_stack(cfg, path, 2048)


@pytest.fixture(scope="session")
def perturbed_doubling():
    """Single symbol d=2 with eps=0.05."""
    sym = SymbolParams(d=2, eps=0.05, H=2 * np.pi)
    path = sample_path(0, [sym], [1.0])
    return path, MeasureStack(path, 0, 256, n_relax=40,
                              family=OperatorFamily(path, 1024, cosine_observable()))


@pytest.fixture
def doubling_path():
    return periodic_path([TWO], [0])
