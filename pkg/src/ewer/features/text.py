"""Hypothesis-side text features: counts and bag-of-words over words and graphemes."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..wer import Utterance

OOV = "<oov>"


def graphemes(token: str) -> list[str]:
    return [c for c in token if not c.isspace()]


def bigrams(token: str) -> list[str]:
    g = graphemes(token)
    return [a + b for a, b in zip(g, g[1:])]


def numerical_features(u: Utterance) -> np.ndarray:
    """[word count, grapheme count, duration in seconds] of the hypothesis."""
    n_graphemes = sum(len(graphemes(t)) for t in u.hypothesis)
    return np.array([len(u.hypothesis), n_graphemes, u.duration], dtype=np.float64)


@dataclass
class Vocab:
    """Index maps for the three bag-of-words sub-blocks.

    Slot 0 of every sub-block is the out-of-vocabulary bucket. Items enter in
    first-seen order over id-sorted training data, and only when they occur
    at least ``min_count`` times.
    """

    words: dict[str, int] = field(default_factory=dict)
    monograms: dict[str, int] = field(default_factory=dict)
    bigrams: dict[str, int] = field(default_factory=dict)
    min_count: int = 1

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.words) + 1, len(self.monograms) + 1, len(self.bigrams) + 1

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    @classmethod
    def build(cls, hypotheses_by_id: Iterable[tuple[str, Sequence[str]]], min_count: int = 1) -> "Vocab":
        rows = sorted(hypotheses_by_id, key=lambda r: r[0])
        counts = (Counter(), Counter(), Counter())
        order: tuple[dict, dict, dict] = ({}, {}, {})
        for _, tokens in rows:
            for t in tokens:
                for c, o, items in zip(counts, order, ([t], graphemes(t), bigrams(t))):
                    for item in items:
                        c[item] += 1
                        o.setdefault(item, len(o))

        def index(c: Counter, o: dict) -> dict[str, int]:
            kept = [item for item in o if c[item] >= min_count]
            return {item: i + 1 for i, item in enumerate(kept)}

        return cls(index(counts[0], order[0]), index(counts[1], order[1]),
                   index(counts[2], order[2]), min_count)

    def to_json(self) -> str:
        return json.dumps({"min_count": self.min_count, "words": list(self.words),
                           "monograms": list(self.monograms), "bigrams": list(self.bigrams)},
                          ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        d = json.loads(text)

        def index(items):
            return {item: i + 1 for i, item in enumerate(items)}

        return cls(index(d["words"]), index(d["monograms"]), index(d["bigrams"]), d.get("min_count", 1))


def text_features(hypothesis: Sequence[str], v: Vocab) -> np.ndarray:
    """Concatenated counts: words | character monograms | within-token bigrams."""
    nw, nm, nb = v.sizes
    out = np.zeros(nw + nm + nb, dtype=np.float64)
    for t in hypothesis:
        out[v.words.get(t, 0)] += 1
        for g in graphemes(t):
            out[nw + v.monograms.get(g, 0)] += 1
        for b in bigrams(t):
            out[nw + nm + v.bigrams.get(b, 0)] += 1
    return out
