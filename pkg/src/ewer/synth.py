"""Synthetic ASR-style corpora with exactly known injected errors.

Substituted and inserted words are fresh tokens: absent from the reference
and unique within the utterance, made by a one-character mutation of a real
word (the way ASR confusions look). In substitution-only mode the alignment
error count therefore equals the injected count exactly; with deletions and
insertions mixed in it is only an upper bound.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy import stats

from .errors import EmptyCorpus, InvalidConfig
from .wer import Utterance, align, corpus_score, write_corpus

LETTERS = string.ascii_lowercase

DEFAULT_SHAPES = {
    # mean 23.4 on a 0..150 scale (the 100 h training split average)
    "skewed-left": {"a": 0.6, "b": 3.25, "scale": 150.0},
    "uniform": {"low": 0.0, "high": 100.0},
    "bimodal": {"a1": 2.0, "b1": 10.0, "a2": 8.0, "b2": 6.0, "weight": 0.7, "scale": 100.0},
}


@dataclass
class GenConfig:
    n_utterances: int = 1000
    min_len: int = 5
    max_len: int = 65
    vocab_size: int = 2000
    shape: Literal["skewed-left", "uniform", "bimodal"] = "skewed-left"
    shape_params: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    seconds_per_token: float = 0.366
    duration_noise: float = 0.5
    mode: Literal["mixed", "substitution"] = "mixed"
    edit_mix: tuple[float, float, float] = (0.65, 0.2, 0.15)  # substitution, deletion, insertion
    zipf: float = 1.0

    def __post_init__(self):
        if self.n_utterances < 1:
            raise InvalidConfig("n_utterances must be positive")
        if self.min_len < 2 or self.max_len < self.min_len:
            raise InvalidConfig(f"need 2 <= min_len <= max_len, got {self.min_len}..{self.max_len}")
        if self.vocab_size < 2:
            raise InvalidConfig("vocab_size must be at least 2")
        if self.shape not in DEFAULT_SHAPES:
            raise InvalidConfig(f"unknown WER shape {self.shape!r}")
        if self.mode not in ("mixed", "substitution"):
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        mix = np.asarray(self.edit_mix, dtype=float)
        if mix.shape != (3,) or np.any(mix < 0) or mix.sum() <= 0:
            raise InvalidConfig("edit_mix must be three non-negative weights")
        self.edit_mix = tuple(float(x) for x in mix / mix.sum())
        if self.seconds_per_token <= 0 or self.duration_noise < 0:
            raise InvalidConfig("duration model needs positive seconds_per_token and non-negative noise")
        params = self.params
        unknown = set(self.shape_params) - set(DEFAULT_SHAPES[self.shape])
        if unknown:
            raise InvalidConfig(f"unknown parameters for shape {self.shape!r}: {sorted(unknown)}")
        if self.mode == "substitution" and self.max_wer() > 100.0:
            raise InvalidConfig("substitution-only corpora cannot exceed 100 WER; lower the shape scale")
        if any(v < 0 for v in params.values()):
            raise InvalidConfig("shape parameters must be non-negative")

    @property
    def params(self) -> dict[str, float]:
        return {**DEFAULT_SHAPES[self.shape], **self.shape_params}

    def max_wer(self) -> float:
        p = self.params
        return p["high"] if self.shape == "uniform" else p["scale"]

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["edit_mix"] = list(self.edit_mix)
        return d


def shape_cdf(config: GenConfig, x) -> np.ndarray:
    """CDF of the requested per-utterance WER distribution (percent)."""
    p = config.params
    x = np.asarray(x, dtype=float)
    if config.shape == "uniform":
        return stats.uniform(p["low"], p["high"] - p["low"]).cdf(x)
    if config.shape == "skewed-left":
        return stats.beta(p["a"], p["b"], scale=p["scale"]).cdf(x)
    w = p["weight"]
    return (w * stats.beta(p["a1"], p["b1"], scale=p["scale"]).cdf(x)
            + (1 - w) * stats.beta(p["a2"], p["b2"], scale=p["scale"]).cdf(x))


def sample_wer(config: GenConfig, rng: np.random.Generator) -> float:
    p = config.params
    if config.shape == "uniform":
        return float(rng.uniform(p["low"], p["high"]))
    if config.shape == "skewed-left":
        return float(p["scale"] * rng.beta(p["a"], p["b"]))
    if rng.random() < p["weight"]:
        return float(p["scale"] * rng.beta(p["a1"], p["b1"]))
    return float(p["scale"] * rng.beta(p["a2"], p["b2"]))


@dataclass(frozen=True)
class EditTruth:
    id: str
    injected_i: int
    injected_d: int
    injected_s: int

    @property
    def injected(self) -> int:
        return self.injected_i + self.injected_d + self.injected_s


@dataclass
class SynthCorpus:
    utterances: list[Utterance]
    truth: list[EditTruth]

    def __len__(self) -> int:
        return len(self.utterances)

    def split(self, fractions: Sequence[float] = (0.6, 0.2, 0.2)) -> list["SynthCorpus"]:
        """Contiguous splits in generation order (utterances are i.i.d.)."""
        cuts = np.floor(np.cumsum(fractions) / np.sum(fractions) * len(self)).astype(int)
        cuts[-1] = len(self)
        out, start = [], 0
        for c in cuts:
            out.append(SynthCorpus(self.utterances[start:c], self.truth[start:c]))
            start = c
        return out


def make_vocab(config: GenConfig) -> list[str]:
    rng = np.random.default_rng([config.seed, 0])
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < config.vocab_size:
        n = int(rng.integers(2, 9))
        w = "".join(LETTERS[i] for i in rng.integers(0, 26, n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _mutate(word: str, rng: np.random.Generator) -> str:
    op = int(rng.integers(3)) if len(word) > 1 else int(rng.integers(2))
    pos = int(rng.integers(len(word)))
    c = LETTERS[int(rng.integers(26))]
    if op == 0:
        return word[:pos] + c + word[pos + 1:]
    if op == 1:
        return word[:pos] + c + word[pos:]
    return word[:pos] + word[pos + 1:]


def _fresh(base: str, taken: set[str], rng: np.random.Generator) -> str:
    w = base
    for _ in range(50):
        w = _mutate(base, rng)
        if w not in taken:
            break
    while w in taken:
        w += LETTERS[int(rng.integers(26))]
    taken.add(w)
    return w


def _stochastic_round(x: float, rng: np.random.Generator) -> int:
    f = np.floor(x)
    return int(f + (rng.random() < x - f))


def generate_one(config: GenConfig, index: int, vocab: Sequence[str], probs: np.ndarray) -> tuple[Utterance, EditTruth]:
    rng = np.random.default_rng([config.seed, 1, index])
    n = int(rng.integers(config.min_len, config.max_len + 1))
    ref = [vocab[i] for i in rng.choice(len(vocab), size=n, p=probs)]
    e = _stochastic_round(sample_wer(config, rng) * n / 100.0, rng)
    if config.mode == "substitution":
        s, d, ins = min(e, n), 0, 0
    else:
        s, d, ins = (int(v) for v in rng.multinomial(e, config.edit_mix))
        excess = s + d - n
        if excess > 0:
            take = min(excess, d)
            d -= take
            s -= excess - take
            ins += excess
    taken = set(ref)
    positions = rng.permutation(n)
    sub_pos = set(int(p) for p in positions[:s])
    del_pos = set(int(p) for p in positions[s:s + d])
    # gap g sits before token g; gaps touching a deletion are avoided so an
    # insertion and a deletion do not collapse into one substitution
    gaps = [g for g in range(n + 1) if g not in del_pos and g - 1 not in del_pos] or list(range(n + 1))
    ins_at = np.bincount(rng.choice(len(gaps), size=ins), minlength=len(gaps)) if ins else np.zeros(len(gaps), int)
    ins_count = {gaps[i]: int(c) for i, c in enumerate(ins_at) if c}
    hyp: list[str] = []
    for pos in range(n + 1):
        for _ in range(ins_count.get(pos, 0)):
            hyp.append(_fresh(vocab[int(rng.choice(len(vocab), p=probs))], taken, rng))
        if pos == n:
            break
        if pos in del_pos:
            continue
        hyp.append(_fresh(ref[pos], taken, rng) if pos in sub_pos else ref[pos])
    duration = max(0.1, n * config.seconds_per_token + config.duration_noise * float(rng.standard_normal()))
    uid = f"utt{index:06d}"
    return Utterance(uid, tuple(ref), tuple(hyp), round(duration, 3)), EditTruth(uid, ins, d, s)


def generate(config: GenConfig) -> SynthCorpus:
    vocab = make_vocab(config)
    probs = 1.0 / np.arange(1, len(vocab) + 1) ** config.zipf
    probs /= probs.sum()
    pairs = [generate_one(config, i, vocab, probs) for i in range(config.n_utterances)]
    return SynthCorpus([u for u, _ in pairs], [t for _, t in pairs])


@dataclass(frozen=True)
class CorpusStats:
    n: int
    mean_err: float
    mean_duration: float
    mean_length: float
    corpus_wer: float
    mean_wer: float


def describe(corpus: Sequence[Utterance] | SynthCorpus) -> CorpusStats:
    """Averages per utterance: realized ERR, duration, reference length, plus corpus WER."""
    utts = corpus.utterances if isinstance(corpus, SynthCorpus) else list(corpus)
    if not utts:
        raise EmptyCorpus("cannot describe an empty corpus")
    alignments = [align(u.reference, u.hypothesis) for u in utts]
    scored = [a for a in alignments if a.n_ref]
    return CorpusStats(
        n=len(utts),
        mean_err=float(np.mean([a.err for a in alignments])),
        mean_duration=float(np.mean([u.duration for u in utts])),
        mean_length=float(np.mean([len(u.reference) for u in utts])),
        corpus_wer=corpus_score(alignments).wer,
        mean_wer=float(np.mean([100.0 * a.err / a.n_ref for a in scored])),
    )


def write_truth(path: str | Path, truth: Sequence[EditTruth]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t in truth:
            f.write(json.dumps({"id": t.id, "injected_i": t.injected_i, "injected_d": t.injected_d,
                                "injected_s": t.injected_s}) + "\n")


def read_truth(path: str | Path) -> list[EditTruth]:
    with open(path, encoding="utf-8") as f:
        return [EditTruth(**json.loads(line)) for line in f if line.strip()]


def write_synth(out_dir: str | Path, corpus: SynthCorpus, split: Sequence[float] | None = (0.6, 0.2, 0.2)) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": out / "corpus.jsonl", "truth": out / "truth.jsonl"}
    write_corpus(paths["corpus"], corpus.utterances)
    write_truth(paths["truth"], corpus.truth)
    if split:
        for name, part in zip(("train", "dev", "test"), corpus.split(split)):
            paths[name] = out / f"{name}.jsonl"
            write_corpus(paths[name], part.utterances)
    return paths
