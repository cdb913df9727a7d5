import numpy as np
import pytest

from ssba.scene import SceneConfig, generate_scene


@pytest.fixture(scope="session")
def default_scene():
    """The default 20,000-UE street-canyon dataset (seed 7)."""
    return generate_scene(SceneConfig(), 7)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneConfig(n_ue=300), 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
