import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from avt_retrieval import synth

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def tiny_config(**overrides):
    base = dict(n_train=24, n_test=8, gallery_extra=6, n_frames=3, n_audio_tokens=4, dim=12, audio_dim=16)
    base.update(overrides)
    return synth.SynthConfig().replace(**base)


@pytest.fixture
def tiny_dataset():
    return synth.generate(tiny_config(), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
