"""
Shared fixtures
"""

import os

import numpy as np
import pytest

from mushroomnet.backbone import build_mushroomnet
from mushroomnet.engine import MushroomModel
from mushroomnet.genetics import GeneticDistanceMatrix, read_matrix
from mushroomnet.tensor import get_default_dtype, set_default_dtype


@pytest.fixture
def float64():
    """Run a test in 64-bit precision and restore the previous default"""
    previous = get_default_dtype()
    set_default_dtype(np.float64)
    yield
    set_default_dtype(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_matrix():
    """Three species where cosine read-out of the diag -1 targets is exact"""
    values = np.array([[0.0, 0.2, 0.9],
                       [0.2, 0.0, 0.8],
                       [0.9, 0.8, 0.0]])
    return GeneticDistanceMatrix(('A', 'B', 'C'), values)


@pytest.fixture
def tiny_spec():
    return build_mushroomnet(3, strategy='proposed', alpha=0.25, resolution=32)


@pytest.fixture
def tiny_model(tiny_spec):
    return MushroomModel(tiny_spec, seed=0, dtype=np.float64)


@pytest.fixture
def batch(rng):
    """Two random images at 32x32"""
    return rng.uniform(0.0, 1.0, size=(2, 3, 32, 32))


@pytest.fixture(scope='session')
def its_matrix():
    """The bundled 18-species ITS distance matrix"""
    return read_matrix(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'data',
                                    'its_distances.csv'))
