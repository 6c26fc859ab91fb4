import numpy as np
import pytest

from robust_omc.kernels import BACKENDS


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    """Name of each available kernel backend."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
