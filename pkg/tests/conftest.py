import numpy as np
import pytest

from fdconv.config import FDConvConfig, TrainConfig
from fdconv.data import gen_band_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_layer():
    return FDConvConfig(k=3, c_in=2, c_out=4, n=4)


@pytest.fixture
def tiny_train():
    """
    A quick training setup: 16×16 images, a few epochs worth of steps.
    """
    layer = FDConvConfig(k=3, c_in=1, c_out=4, n=4)
    return TrainConfig(layer, steps=12, batch=16, dataset_size=100, dataset_s=16)


@pytest.fixture
def tiny_dataset(tiny_train):
    return gen_band_dataset(0, 100, 16)
