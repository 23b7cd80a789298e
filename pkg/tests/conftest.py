import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A minute-scale synthetic corpus; returns the manifest path."""
    from cidnn.synth import make_corpus
    out = tmp_path_factory.mktemp("corpus")
    return make_corpus(str(out), minutes=1.5, seed=3, n_train_speakers=4,
                       n_test_speakers=1, test_per_speaker=3, noise_seconds=(20.0, 10.0))
