import numpy as np
import pytest

from core.dataset import SynthSpec, generate_synthetic
from core.trainer import TrainConfig


def tiny_spec(**kw) -> SynthSpec:
    """3 scenes, 6 events, 480-sample clips: small enough to train in seconds."""
    values = dict(num_scenes=3, num_events=6, events_per_scene=2, train_per_scene=4,
                  test_per_scene=2, duration_samples=480, sample_rate=8000, seed=7)
    values.update(kw)
    return SynthSpec(**values)


def tiny_config(**kw) -> TrainConfig:
    """Backbone over 479 samples: 39 frames after the strided conv, then 13 and 4."""
    values = dict(filters=4, res_blocks=2, code_dim=3, hidden_dim=6, epochs=2, batch_size=4,
                  max_iter=2000)
    values.update(kw)
    return TrainConfig.from_flat({**TrainConfig().to_dict(), **values})


@pytest.fixture
def tiny_dataset():
    return generate_synthetic(tiny_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(0)
