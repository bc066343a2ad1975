import numpy as np
import pytest

from pevade import corpus, models

DEFAULT_SPEC = corpus.CorpusSpec()


@pytest.fixture(scope="session")
def default_corpus():
    """The standard 400-file corpus used by the acceptance suite."""
    return corpus.generate_corpus(DEFAULT_SPEC)


@pytest.fixture(scope="session")
def small_corpus():
    return corpus.generate_corpus(
        corpus.CorpusSpec(malware_count=24, goodware_count=24, seed=11)
    )


@pytest.fixture(scope="session")
def malware_sample(small_corpus):
    return next(s for s in small_corpus if s.label == corpus.MALWARE)


@pytest.fixture(scope="session")
def hier_model(small_corpus):
    """A quick hierarchical net with a calibrated threshold, for attack tests."""
    c = models.train(small_corpus, models.HIER_RELU_KIND, seed=4)
    scores = c.score_batch([s.data for s in small_corpus])
    c.threshold = models.calibrate_threshold(
        scores, [s.label for s in small_corpus], 0.01
    )
    return c


@pytest.fixture(scope="session")
def handcrafted_model(small_corpus):
    c = models.train(small_corpus, models.HANDCRAFTED_KIND, seed=0)
    scores = c.score_batch([s.data for s in small_corpus])
    c.threshold = models.calibrate_threshold(
        scores, [s.label for s in small_corpus], 0.01
    )
    return c


def payload_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1234])
