import numpy as np
import pytest

from fedprint.data import CorpusParams, generate
from fedprint.nn import init_params


SMALL = CorpusParams(
    num_clients=8, feature_dim=6, num_classes=4, frames_min=40, frames_max=90,
    analysis_threshold=60, analysis_size=15, enroll_frames=30, dev_speakers=2,
    test_speakers=2, eval_frames=40, indicator_utterances=3, indicator_frames=5,
)


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SMALL, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def tiny_params():
    return init_params([6, 8, 8, 4], seed=3)
