import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ewer.evaluation import Dataset, Split
from ewer.features import FeatureConfig, build_vocab, featurize
from ewer.synth import GenConfig, generate

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_corpus():
    return generate(GenConfig(n_utterances=300, seed=11))


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    train, dev, test = small_corpus.split()
    fc = FeatureConfig()
    vocab = build_vocab(train.utterances, fc.vocab_min_count)

    def split(part):
        return Split.from_corpus(part.utterances, featurize(part.utterances, fc, vocab))

    return Dataset(split(train), split(dev), split(test))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
