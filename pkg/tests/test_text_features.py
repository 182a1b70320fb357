from collections import Counter

import numpy as np

from ewer.features.text import Vocab, bigrams, graphemes, numerical_features, text_features
from ewer.wer import Utterance, normalize


def test_numerical_features():
    u = Utterance("a", ("x",), normalize("st james 7"), 1.2)
    assert list(numerical_features(u)) == [3, 8, 1.2]
    assert list(numerical_features(Utterance("b", ("x",), (), 4.0))) == [0, 0, 4.0]


def test_graphemes_and_bigrams():
    assert graphemes("abc") == ["a", "b", "c"]
    assert bigrams("abc") == ["ab", "bc"]
    assert bigrams("a") == []


def test_vocab_first_seen_order_over_sorted_ids():
    v = Vocab.build([("b", ("yy",)), ("a", ("xy",))], min_count=1)
    assert v.words == {"xy": 1, "yy": 2}
    assert v.monograms == {"x": 1, "y": 2}
    assert v.bigrams == {"xy": 1, "yy": 2}


def test_min_count_drops_rare_items():
    v = Vocab.build([("a", ("p", "q", "p"))], min_count=2)
    assert v.words == {"p": 1}


def test_single_token_example():
    v = Vocab.build([("a", ("aa",))])
    x = text_features(("aa",), v)
    nw, nm, nb = v.sizes
    assert x[1] == 1  # word "aa"
    assert x[nw + 1] == 2  # monogram "a" twice
    assert x[nw + nm + 1] == 1  # bigram "aa"


def test_oov_bucket():
    v = Vocab.build([("a", ("ab",))])
    x = text_features(("zz",), v)
    nw, nm, _ = v.sizes
    assert x[0] == 1 and x[nw] == 2 and x[nw + nm] == 1


def test_summed_features_equal_term_counts(small_corpus):
    utts = small_corpus.utterances[:50]
    v = Vocab.build(((u.id, u.hypothesis) for u in utts))
    total = sum(text_features(u.hypothesis, v) for u in utts)
    words = Counter(t for u in utts for t in u.hypothesis)
    chars = Counter(c for u in utts for t in u.hypothesis for c in t)
    pairs = Counter(b for u in utts for t in u.hypothesis for b in bigrams(t))
    nw, nm, _ = v.sizes
    for w, i in v.words.items():
        assert total[i] == words[w]
    for c, i in v.monograms.items():
        assert total[nw + i] == chars[c]
    for b, i in v.bigrams.items():
        assert total[nw + nm + i] == pairs[b]
    # nothing lands in OOV when the vocabulary saw every item
    assert total[0] == total[nw] == total[nw + nm] == 0


def test_vocab_json_roundtrip():
    v = Vocab.build([("a", ("héllo", "w")), ("b", ("w",))], min_count=1)
    again = Vocab.from_json(v.to_json())
    assert again == v
    assert np.array_equal(text_features(("héllo",), again), text_features(("héllo",), v))
