import numpy as np
import pytest

from func.batching import Batch
from func.model_core import init_params
from func.synthetic import random_kg, tiny_kg
from helpers import kmeans_features, random_features, randomize


@pytest.fixture
def tiny():
    return tiny_kg()


@pytest.fixture
def kg50():
    return random_kg(20, 3, 50, seed=1)


@pytest.fixture
def tiny_features(tiny):
    return kmeans_features(tiny, 8, 2)


@pytest.fixture
def small_projb():
    """5 entities, 2 relations, k_e = 3, k_r = 2, every array random."""
    rng = np.random.default_rng(7)
    features = random_features(5, 2, 3, 2, rng)
    params = init_params(5, 2, features, rng, mode='projb', dims_entity=3, dims_relation=2)
    return randomize(params, rng)


@pytest.fixture
def small_proje():
    rng = np.random.default_rng(11)
    params = init_params(5, 2, None, rng, mode='proje', dims_entity=3)
    return randomize(params, rng)


@pytest.fixture
def fixed_batch():
    """Two instances with hand-picked candidate lists; the second row is padded."""
    return Batch(entities=np.array([0, 3]), relations=np.array([1, 0]), directions=np.array([0, 1]),
                 triple_ids=np.array([0, 1]),
                 candidates=np.array([[1, 2, 4], [0, 2, 0]]),
                 mask=np.array([[True, True, True], [True, True, False]]),
                 labels=np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]),
                 target_slot=np.array([0, 1]))
