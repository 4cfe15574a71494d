import logging

import numpy as np
import pytest

from params import ModelParams
from objective import Raceway


@pytest.fixture
def params():
    """Reference bundle: L = 100, Nz = 7, M = 5."""
    return ModelParams().validate()


@pytest.fixture
def small_params():
    """Short lap with few layers and modes, cheap enough for optimization tests."""
    return ModelParams().with_overrides(L=1.0, Nz=3, M=2)


@pytest.fixture
def small_raceway(small_params):
    return Raceway(small_params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _quiet_root_logger():
    """Drop handlers a test installed on the root logger."""
    root = logging.getLogger()
    before = list(root.handlers)
    yield
    for handler in list(root.handlers):
        if handler not in before:
            root.removeHandler(handler)
            handler.close()
