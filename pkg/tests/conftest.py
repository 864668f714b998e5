import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dstts import dsp, synthetic
from dstts.config import tiny_config
from dstts.model import DSTTS
from dstts.pipeline import gradcheck_batch

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    return DSTTS(tiny_cfg)


@pytest.fixture
def tiny_batch(tiny_cfg):
    return gradcheck_batch(tiny_cfg)


@pytest.fixture(scope="session")
def speech():
    """A short speech-like clip plus its alignment."""
    return synthetic.synthetic_utterance(10, seed=3)


@pytest.fixture(scope="session")
def speech_features(speech):
    return dsp.extract_features(speech.clip)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = synthetic.write_corpus(root, count=4, seed=0)
    return manifest
