import numpy as np
import pytest

from wearcast.raster import BinaryImage, GrayImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, width=190, height=190) -> GrayImage:
    return GrayImage(rng.integers(0, 256, size=(height, width), dtype=np.uint8))


def random_mask(rng, width=32, height=32, p=0.4) -> BinaryImage:
    return BinaryImage(rng.random((height, width)) < p)
