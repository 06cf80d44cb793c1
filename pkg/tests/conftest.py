import numpy as np
import pytest

from strokelocus.phantoms import micro_atlas_labels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def micro_labels():
    return micro_atlas_labels(16)
