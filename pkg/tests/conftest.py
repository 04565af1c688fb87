import numpy as np
import pytest

from gaitscreen.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Small spatial dims and widths: fast full-pipeline tests."""
    return ModelConfig(bags=2, channels=(2, 3, 4), frame_shape=(16, 16),
                       strips=2, strip_dim=4, text_dim=8, init_seed=1)
