import numpy as np
import pytest

from services.flow import TrainConfig
from services.geometry import Mode


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """A few epochs of a narrow net: enough to exercise the harness, not to learn anything."""
    return TrainConfig(mode=Mode.LP, lambda_or_sigma=0.05, epochs=2, batch_size=16, steps_per_epoch=4,
                       learning_rate=1e-3, hidden=8, seed=0)


@pytest.fixture
def no_registry(monkeypatch):
    monkeypatch.setenv('LPCFM_REGISTRY', '0')


def dense_projector(a: np.ndarray) -> np.ndarray:
    return np.outer(a, a) / (a @ a)
