"""Assemble per-utterance feature blocks into a FeatureTable."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import InputError, IoFailure, UnsupportedFormat
from ..wer import Utterance
from . import signal as sig
from .embeddings import load_embeddings
from .table import FeatureTable
from .text import Vocab, numerical_features, text_features

log = logging.getLogger(__name__)

SIGNAL_KINDS = tuple(sig.EXTRACTORS)


@dataclass
class FeatureConfig:
    numerical: bool = True
    text: bool = True
    signal: list[str] = field(default_factory=list)
    embedding: str | None = None
    vocab_min_count: int = 2

    def __post_init__(self):
        bad = [s for s in self.signal if s not in SIGNAL_KINDS]
        if bad:
            raise InputError(f"unknown signal feature(s) {bad}; choose from {list(SIGNAL_KINDS)}")

    def block_names(self) -> list[str]:
        names = []
        if self.numerical:
            names.append("numerical")
        if self.text:
            names.append("text")
        names.extend(self.signal)
        if self.embedding:
            names.append("embedding")
        return names


class MissingAudio(InputError):
    def __init__(self, failures: list[tuple[str, str]]):
        self.failures = failures
        head = "; ".join(f"{uid}: {msg}" for uid, msg in failures[:5])
        super().__init__(f"{len(failures)} utterances lack usable audio ({head})")


def build_vocab(train: Sequence[Utterance], min_count: int = 2) -> Vocab:
    return Vocab.build(((u.id, u.hypothesis) for u in train), min_count=min_count)


def _signal_row(args) -> tuple[np.ndarray | None, str | None]:
    path, kinds = args
    try:
        x, rate = sig.load_pcm(path)
        return np.concatenate([sig.pool_signal(sig.EXTRACTORS[k](x, rate)) for k in kinds]), None
    except (IoFailure, UnsupportedFormat, InputError) as e:
        return None, str(e)


def featurize(corpus: Sequence[Utterance], config: FeatureConfig, vocab: Vocab | None = None,
              base_dir: str | Path | None = None, workers: int = 1,
              allow_missing: bool = False) -> FeatureTable:
    """Feature table for ``corpus`` in corpus order.

    Audio paths are resolved against ``base_dir``. Missing or unreadable audio
    raises :class:`MissingAudio` listing every failure, unless
    ``allow_missing`` is set, in which case those rows get zero signal blocks.
    """
    ids = [u.id for u in corpus]
    blocks: dict[str, np.ndarray] = {}
    if config.numerical:
        blocks["numerical"] = np.stack([numerical_features(u) for u in corpus]) if corpus else np.zeros((0, 3))
    if config.text:
        if vocab is None:
            raise InputError("text features need a vocabulary built from the training split")
        blocks["text"] = (np.stack([text_features(u.hypothesis, vocab) for u in corpus]) if corpus
                          else np.zeros((0, vocab.dim)))
    if config.signal:
        base = Path(base_dir) if base_dir is not None else Path(".")
        jobs = []
        for u in corpus:
            p = None if u.audio_path is None else base / u.audio_path
            jobs.append((p, tuple(config.signal)))
        todo = [(i, j) for i, j in enumerate(jobs) if j[0] is not None]
        results: list[tuple[np.ndarray | None, str | None]] = [(None, "no audio path")] * len(jobs)
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(workers) as ex:
                for (i, _), r in zip(todo, ex.map(_signal_row, [j for _, j in todo])):
                    results[i] = r
        else:
            for i, j in todo:
                results[i] = _signal_row(j)
        failures = [(ids[i], msg) for i, (_, msg) in enumerate(results) if msg is not None]
        if failures and not allow_missing:
            raise MissingAudio(failures)
        for uid, msg in failures:
            log.warning("zero signal features for %s: %s", uid, msg)
        width = sum(sig.POOLED_DIMS[k] for k in config.signal)
        mat = np.stack([r if r is not None else np.zeros(width) for r, _ in results]) if results \
            else np.zeros((0, width))
        col = 0
        for k in config.signal:
            blocks[k] = mat[:, col:col + sig.POOLED_DIMS[k]]
            col += sig.POOLED_DIMS[k]
    if config.embedding:
        blocks["embedding"] = load_embeddings(config.embedding, ids)
    return FeatureTable(ids, blocks)
