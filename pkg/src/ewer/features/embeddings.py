"""Reader/writer for externally computed sentence embeddings (``EWER-EMB v1``)."""

from __future__ import annotations

import logging
import warnings
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..errors import DimensionMismatch, IoFailure, MissingId, UnsupportedFormat

log = logging.getLogger(__name__)

MAGIC = "EWER-EMB"
VERSION = "v1"


def read_embeddings(path: str | Path) -> tuple[dict[str, np.ndarray], int]:
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot open embeddings {path}: {e.strerror}") from e
    table: dict[str, np.ndarray] = {}
    with f:
        header = f.readline().split()
        if len(header) != 3 or header[0] != MAGIC or header[1] != VERSION:
            raise UnsupportedFormat(f"{path}: expected header '{MAGIC} {VERSION} <dim>'")
        try:
            dim = int(header[2])
        except ValueError:
            raise UnsupportedFormat(f"{path}: bad dimension {header[2]!r}") from None
        if dim < 1:
            raise UnsupportedFormat(f"{path}: dimension must be positive")
        for lineno, line in enumerate(f, 2):
            parts = line.split()
            if not parts:
                continue
            uid, vals = parts[0], parts[1:]
            if len(vals) != dim:
                raise DimensionMismatch(f"{path}:{lineno}: {len(vals)} values for {uid!r}, header says {dim}")
            try:
                vec = np.array([float(v) for v in vals])
            except ValueError:
                raise UnsupportedFormat(f"{path}:{lineno}: non-numeric value") from None
            if uid in table:
                warnings.warn(f"duplicate embedding id {uid!r} at line {lineno}; keeping the last one",
                              stacklevel=2)
            table[uid] = vec
    return table, dim


def load_embeddings(path: str | Path | None, ids: Iterable[str]) -> np.ndarray | None:
    """Embedding rows aligned with ``ids``; None when no file is configured."""
    if path is None:
        return None
    table, dim = read_embeddings(path)
    ids = list(ids)
    missing = [i for i in ids if i not in table]
    if missing:
        raise MissingId(f"{len(missing)} ids have no embedding, e.g. {missing[:3]}")
    out = np.empty((len(ids), dim))
    for r, uid in enumerate(ids):
        out[r] = table[uid]
    return out


def write_embeddings(path: str | Path, vectors: Mapping[str, np.ndarray]) -> None:
    dims = {len(v) for v in vectors.values()}
    if len(dims) != 1:
        raise DimensionMismatch(f"embeddings must share one dimension, got {sorted(dims)}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{MAGIC} {VERSION} {dims.pop()}\n")
        for uid, v in vectors.items():
            f.write(uid + " " + " ".join(repr(float(x)) for x in v) + "\n")
