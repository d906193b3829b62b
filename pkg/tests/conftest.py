import numpy as np
import pytest

from detsel.image import GrayImage
from detsel.scenes import synth_corpus


@pytest.fixture(scope="session")
def scenes():
    """Eight 128x128 procedural scenes shared by unit tests."""
    return [img for _, img in synth_corpus(8, seed=11, height=128, width=128)]


@pytest.fixture(scope="session")
def scene(scenes):
    return scenes[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w, lo=0, hi=256):
    return GrayImage(rng.integers(lo, hi, size=(h, w), dtype=np.uint8))
