import numpy as np
import pytest
from scipy import stats

from ewer.errors import EmptyCorpus, InvalidConfig
from ewer.synth import (GenConfig, SynthCorpus, describe, generate, generate_one, make_vocab, read_truth,
                        shape_cdf, write_synth)
from ewer.wer import align, corpus_wer, read_corpus


def realized_wer(corpus):
    return np.array([100.0 * t.injected / len(u.reference) for u, t in zip(corpus.utterances, corpus.truth)])


@pytest.fixture(scope="module")
def bimodal_10k():
    return generate(GenConfig(n_utterances=10000, shape="bimodal", mode="substitution", seed=2))


def test_zero_errors_copy_reference():
    c = generate(GenConfig(n_utterances=20, shape="uniform", shape_params={"high": 0.0}))
    assert all(u.hypothesis == u.reference for u in c.utterances)
    assert all(t.injected == 0 for t in c.truth)


def test_substitution_errors_are_exact(bimodal_10k):
    for u, t in zip(bimodal_10k.utterances, bimodal_10k.truth):
        a = align(u.reference, u.hypothesis)
        assert a.err == a.substitutions == t.injected_s
        assert t.injected_i == t.injected_d == 0


def test_mixed_mode_bound():
    c = generate(GenConfig(n_utterances=400, seed=5))
    for u, t in zip(c.utterances, c.truth):
        assert align(u.reference, u.hypothesis).err <= t.injected
        assert len(u.hypothesis) == len(u.reference) - t.injected_d + t.injected_i


def test_fresh_tokens_unique():
    c = generate(GenConfig(n_utterances=200, seed=4))
    for u in c.utterances:
        fresh = [w for w in u.hypothesis if w not in set(u.reference)]
        assert len(fresh) == len(set(fresh))


@pytest.mark.parametrize("config", [
    GenConfig(n_utterances=10000, shape="uniform", mode="substitution", seed=3),
    GenConfig(n_utterances=10000, shape="skewed-left", shape_params={"a": 2.0, "b": 6.0, "scale": 100.0},
              mode="substitution", seed=3),
], ids=["uniform", "skewed"])
def test_ks_against_requested_shape(config):
    d = stats.kstest(realized_wer(generate(config)), lambda x: shape_cdf(config, x)).statistic
    assert d <= 0.05


def test_ks_bimodal(bimodal_10k):
    cfg = GenConfig(shape="bimodal", mode="substitution")
    assert stats.kstest(realized_wer(bimodal_10k), lambda x: shape_cdf(cfg, x)).statistic <= 0.05


def test_calibration_matches_target():
    # averaged training statistics: ERR 8.16 over 34.84 words is a 23.42 corpus WER
    assert 100 * 8.16 / 34.84 == pytest.approx(23.42, abs=0.01)
    st = describe(generate(GenConfig(n_utterances=5000, seed=1)))
    assert st.corpus_wer == pytest.approx(23.4, abs=2.0)
    assert st.mean_length == pytest.approx(34.8, abs=1.5)
    assert st.mean_err == pytest.approx(8.2, abs=1.0)


def test_describe(small_corpus):
    st = describe(small_corpus)
    assert all(np.isfinite([st.mean_err, st.mean_duration, st.mean_length, st.corpus_wer, st.mean_wer]))
    assert 5 <= st.mean_length <= 65
    alignments = [align(u.reference, u.hypothesis) for u in small_corpus.utterances]
    assert st.corpus_wer == corpus_wer(alignments)
    with pytest.raises(EmptyCorpus):
        describe([])


def test_generation_is_pure():
    cfg = GenConfig(n_utterances=50, seed=9)
    assert generate(cfg).utterances == generate(cfg).utterances
    vocab = make_vocab(cfg)
    probs = 1.0 / np.arange(1, len(vocab) + 1)
    probs /= probs.sum()
    # per-utterance seeding: utterance 30 does not depend on the ones before it
    assert generate_one(cfg, 30, vocab, probs)[0] == generate(cfg).utterances[30]
    assert generate(GenConfig(n_utterances=50, seed=10)).utterances != generate(cfg).utterances


def test_durations_and_lengths():
    c = generate(GenConfig(n_utterances=300, min_len=2, max_len=4, seed=1))
    assert all(2 <= len(u.reference) <= 4 for u in c.utterances)
    assert all(u.duration >= 0.1 for u in c.utterances)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        GenConfig(min_len=1)
    with pytest.raises(InvalidConfig):
        GenConfig(shape="triangle")
    with pytest.raises(InvalidConfig):
        GenConfig(shape_params={"q": 1.0})
    with pytest.raises(InvalidConfig):
        GenConfig(mode="substitution")  # default skewed shape reaches 150
    with pytest.raises(InvalidConfig):
        GenConfig(edit_mix=(0, 0, 0))


def test_split_and_files(tmp_path):
    c = generate(GenConfig(n_utterances=10, seed=0))
    parts = c.split((0.6, 0.2, 0.2))
    assert [len(p) for p in parts] == [6, 2, 2]
    assert isinstance(parts[0], SynthCorpus)
    paths = write_synth(tmp_path, c)
    assert read_corpus(paths["corpus"]) == c.utterances
    assert read_truth(paths["truth"]) == c.truth
    assert [u.id for u in read_corpus(paths["dev"])] == [u.id for u in parts[1].utterances]
