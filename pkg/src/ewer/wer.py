"""Exact word error rate scoring by minimum edit distance alignment."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

from .errors import CorpusFormatError, DegenerateUtterance, EmptyCorpus, EmptyReference

log = logging.getLogger(__name__)

_WHITESPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class NormalizerConfig:
    lowercase: bool = True
    # characters removed before splitting; empty keeps punctuation inside tokens
    strip_chars: str = ""


DEFAULT_NORMALIZER = NormalizerConfig()


def normalize(text: str, config: NormalizerConfig = DEFAULT_NORMALIZER) -> tuple[str, ...]:
    if config.lowercase:
        text = text.lower()
    if config.strip_chars:
        text = text.translate({ord(c): " " for c in config.strip_chars})
    return tuple(_WHITESPACE.split(text.strip())) if text.strip() else ()


@dataclass(frozen=True)
class Utterance:
    id: str
    reference: tuple[str, ...]
    hypothesis: tuple[str, ...]
    duration: float = 0.0
    audio_path: str | None = None

    def __post_init__(self):
        if self.duration < 0:
            raise CorpusFormatError(f"utterance {self.id!r}: negative duration {self.duration}")


@dataclass(frozen=True)
class AlignmentResult:
    insertions: int
    deletions: int
    substitutions: int
    correct: int
    n_ref: int

    @property
    def err(self) -> int:
        return self.insertions + self.deletions + self.substitutions

    @property
    def degenerate(self) -> bool:
        return self.n_ref == 0


def align(reference: Sequence[str], hypothesis: Sequence[str]) -> AlignmentResult:
    """Levenshtein alignment with unit costs.

    Among minimum-cost alignments the one with the most substitutions (and so
    the fewest insertions plus deletions) is reported. That breakdown is
    unique, so swapping reference and hypothesis just swaps I and D.
    """
    n, m = len(reference), len(hypothesis)
    if n == 0:
        if m:
            raise EmptyReference(f"empty reference with {m} hypothesis tokens")
        return AlignmentResult(0, 0, 0, 0, 0)

    # cost = errors * big + indels, minimized lexicographically in one integer
    big = n + m + 1
    gap = big + 1
    prev = [j * gap for j in range(m + 1)]
    for i in range(1, n + 1):
        r = reference[i - 1]
        cur = [i * gap] + [0] * m
        for j in range(1, m + 1):
            diag = prev[j - 1] + (big if r != hypothesis[j - 1] else 0)
            up = prev[j] + gap
            left = cur[j - 1] + gap
            cur[j] = min(diag, up, left)
        prev = cur

    err, indels = divmod(prev[m], big)
    ins = (indels + m - n) // 2
    dels = indels - ins
    subs = err - indels
    return AlignmentResult(ins, dels, subs, n - subs - dels, n)


def wer(a: AlignmentResult) -> float:
    """Percent WER; can exceed 100 when the hypothesis is insertion heavy."""
    if a.n_ref == 0:
        raise DegenerateUtterance("WER undefined for an empty reference")
    return 100.0 * a.err / a.n_ref


class CorpusScore(NamedTuple):
    wer: float
    errors: int
    words: int
    excluded: int


def corpus_score(alignments: Iterable[AlignmentResult]) -> CorpusScore:
    errors = words = excluded = 0
    for a in alignments:
        if a.degenerate:
            excluded += 1
            continue
        errors += a.err
        words += a.n_ref
    if words == 0:
        raise EmptyCorpus("no utterance with a non-empty reference")
    if excluded:
        log.info("corpus WER excludes %d degenerate utterances", excluded)
    return CorpusScore(100.0 * errors / words, errors, words, excluded)


def corpus_wer(alignments: Iterable[AlignmentResult]) -> float:
    return corpus_score(alignments).wer


def score(u: Utterance) -> AlignmentResult:
    return align(u.reference, u.hypothesis)


# JSONL corpus I/O

def iter_corpus(path: str | Path, normalizer: NormalizerConfig = DEFAULT_NORMALIZER) -> Iterator[Utterance]:
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"invalid JSON: {e.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise CorpusFormatError("expected a JSON object", lineno)
            try:
                uid = str(obj["id"])
                ref = obj["reference"]
                hyp = obj["hypothesis"]
            except KeyError as e:
                raise CorpusFormatError(f"missing field {e.args[0]!r}", lineno) from None
            if not isinstance(ref, str) or not isinstance(hyp, str):
                raise CorpusFormatError("reference and hypothesis must be strings", lineno)
            if uid in seen:
                raise CorpusFormatError(f"duplicate id {uid!r}", lineno)
            seen.add(uid)
            try:
                duration = float(obj.get("duration", 0.0))
            except (TypeError, ValueError):
                raise CorpusFormatError("duration must be a number", lineno) from None
            if duration < 0:
                raise CorpusFormatError("duration must be non-negative", lineno)
            audio = obj.get("audio")
            yield Utterance(uid, normalize(ref, normalizer), normalize(hyp, normalizer),
                            duration, None if audio is None else str(audio))


def read_corpus(path: str | Path, normalizer: NormalizerConfig = DEFAULT_NORMALIZER) -> list[Utterance]:
    return list(iter_corpus(path, normalizer))


def write_corpus(path: str | Path, corpus: Iterable[Utterance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for u in corpus:
            obj = {"id": u.id, "reference": " ".join(u.reference),
                   "hypothesis": " ".join(u.hypothesis), "duration": u.duration}
            if u.audio_path is not None:
                obj["audio"] = u.audio_path
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")
