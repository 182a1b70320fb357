"""Named feature blocks for one sample or a whole dataset, plus the binary cache."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import ChecksumMismatch, DimensionMismatch, IoFailure, ShapeMismatch, UnsupportedFormat, VersionMismatch

CACHE_MAGIC = b"EWERFEAT"
CACHE_VERSION = 1


@dataclass(frozen=True)
class FeatureVector:
    blocks: tuple[tuple[str, np.ndarray], ...]

    @property
    def total_dim(self) -> int:
        return sum(len(v) for _, v in self.blocks)

    @property
    def block_offsets(self) -> dict[str, int]:
        offsets, pos = {}, 0
        for name, v in self.blocks:
            offsets[name] = pos
            pos += len(v)
        return offsets

    def concat(self) -> np.ndarray:
        return np.concatenate([v for _, v in self.blocks])

    def as_table(self, uid: str = "") -> "FeatureTable":
        return FeatureTable([uid], {name: np.asarray(v, dtype=np.float64)[None, :] for name, v in self.blocks})


class FeatureTable:
    """Rows of feature vectors sharing one block layout, keyed by utterance id."""

    def __init__(self, ids: Sequence[str], blocks: dict[str, np.ndarray]):
        self.ids = list(ids)
        self.blocks: dict[str, np.ndarray] = {}
        for name, arr in blocks.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] != len(self.ids):
                raise ShapeMismatch(f"block {name!r} has shape {arr.shape}, expected ({len(self.ids)}, d)")
            self.blocks[name] = arr

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def layout(self) -> list[tuple[str, int]]:
        return [(name, arr.shape[1]) for name, arr in self.blocks.items()]

    @property
    def total_dim(self) -> int:
        return sum(d for _, d in self.layout)

    def row(self, i: int) -> FeatureVector:
        return FeatureVector(tuple((name, arr[i]) for name, arr in self.blocks.items()))

    def take(self, idx) -> "FeatureTable":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureTable([self.ids[i] for i in idx], {n: a[idx] for n, a in self.blocks.items()})

    def select(self, names: Iterable[str]) -> "FeatureTable":
        return FeatureTable(self.ids, {n: self.blocks[n] for n in names})

    def index_of(self) -> dict[str, int]:
        return {uid: i for i, uid in enumerate(self.ids)}

    @classmethod
    def stack(cls, ids: Sequence[str], rows: Sequence[FeatureVector]) -> "FeatureTable":
        if not rows:
            raise ShapeMismatch("no rows to stack")
        names = [n for n, _ in rows[0].blocks]
        for r in rows:
            if [n for n, _ in r.blocks] != names:
                raise DimensionMismatch("rows disagree on block names")
        blocks = {}
        for b, name in enumerate(names):
            dims = {len(r.blocks[b][1]) for r in rows}
            if len(dims) != 1:
                raise DimensionMismatch(f"block {name!r} has varying dimension {sorted(dims)}")
            blocks[name] = np.stack([r.blocks[b][1] for r in rows])
        return cls(ids, blocks)


def save_cache(path: str | Path, table: FeatureTable) -> None:
    """Layout: magic, version byte, block table, id table, row-major float64 LE."""
    out = bytearray(CACHE_MAGIC)
    out += struct.pack("<BII", CACHE_VERSION, len(table), len(table.blocks))
    for name, dim in table.layout:
        b = name.encode("utf-8")
        out += struct.pack("<H", len(b)) + b + struct.pack("<I", dim)
    for uid in table.ids:
        b = uid.encode("utf-8")
        out += struct.pack("<I", len(b)) + b
    if len(table):
        data = np.concatenate(list(table.blocks.values()), axis=1) if table.blocks else np.zeros((len(table), 0))
        out += np.ascontiguousarray(data, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_cache(path: str | Path) -> FeatureTable:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read feature cache {path}: {e.strerror}") from e
    if buf[:8] != CACHE_MAGIC:
        raise UnsupportedFormat(f"{path}: not an EWERFEAT cache")
    try:
        version, n_rows, n_blocks = struct.unpack_from("<BII", buf, 8)
        if version != CACHE_VERSION:
            raise VersionMismatch(f"{path}: cache version {version}, expected {CACHE_VERSION}")
        pos = 17
        layout = []
        for _ in range(n_blocks):
            (ln,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + ln].decode("utf-8")
            (dim,) = struct.unpack_from("<I", buf, pos + 2 + ln)
            layout.append((name, dim))
            pos += 6 + ln
        ids = []
        for _ in range(n_rows):
            (ln,) = struct.unpack_from("<I", buf, pos)
            ids.append(buf[pos + 4:pos + 4 + ln].decode("utf-8"))
            pos += 4 + ln
    except struct.error:
        raise ChecksumMismatch(f"{path}: truncated feature cache") from None
    total = sum(d for _, d in layout)
    if len(buf) - pos != 8 * n_rows * total:
        raise ChecksumMismatch(f"{path}: data section has {len(buf) - pos} bytes, expected {8 * n_rows * total}")
    data = np.frombuffer(buf, dtype="<f8", count=n_rows * total, offset=pos).reshape(n_rows, total)
    blocks, col = {}, 0
    for name, dim in layout:
        blocks[name] = data[:, col:col + dim].astype(np.float64)
        col += dim
    return FeatureTable(ids, blocks)
