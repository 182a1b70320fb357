"""WER class construction: balanced quantile groups and the fixed ladder."""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import InputError, InvalidK, NonMonotonicValues, TooFewSamples

DEFAULT_FIXED = (0.0, 25.0, 50.0, 75.0, 100.0, 150.0)


@dataclass(frozen=True)
class ClassMap:
    """Ordered WER classes with one representative value each (percent).

    ``ranges[i]`` is ``(lo, hi)``. A WER equal to a shared boundary goes to
    the lower class; values beyond the outer bounds go to the first or last
    class.
    """

    kind: Literal["balanced", "fixed"]
    wer_fixed: tuple[float, ...]
    ranges: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.wer_fixed) != len(self.ranges) or len(self.wer_fixed) < 2:
            raise InvalidK("class map needs at least two classes with one range each")

    @property
    def k(self) -> int:
        return len(self.wer_fixed)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.wer_fixed, dtype=np.float64)

    @property
    def boundaries(self) -> tuple[float, ...]:
        return tuple(hi for _, hi in self.ranges[:-1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k, "wer_fixed": list(self.wer_fixed),
                "ranges": [list(r) for r in self.ranges]}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassMap":
        try:
            cm = cls(d["kind"], tuple(float(v) for v in d["wer_fixed"]),
                     tuple((float(lo), float(hi)) for lo, hi in d["ranges"]))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed class map: {e}") from None
        if "k" in d and int(d["k"]) != cm.k:
            raise InputError(f"class map declares k={d['k']} but has {cm.k} classes")
        return cm

    def to_json(self) -> str:
        return _dumps17(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ClassMap":
        return cls.from_dict(json.loads(text))


def _dumps17(obj) -> str:
    """JSON with every float at 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dumps17(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dumps17(v) for v in obj) + "]"
    if isinstance(obj, float):
        if not np.isfinite(obj):
            raise ValueError("non-finite value in class map")
        return format(obj, ".17g")
    return json.dumps(obj)


def group_sizes(d: int, k: int) -> list[int]:
    """Sizes of k contiguous groups over d items; the first d % k get one extra."""
    base, extra = divmod(d, k)
    return [base + 1 if i < extra else base for i in range(k)]


def _check(d: int, k: int) -> None:
    if not isinstance(k, (int, np.integer)) or k < 2:
        raise InvalidK(f"k must be an integer >= 2, got {k!r}")
    if d < k:
        raise TooFewSamples(f"{d} samples cannot fill {k} classes")


def build_balanced(wers: Iterable[float], k: int) -> ClassMap:
    w = np.sort(np.asarray(list(wers), dtype=np.float64))
    _check(len(w), k)
    if not np.all(np.isfinite(w)) or (len(w) and w[0] < 0):
        raise InputError("WER values must be finite and non-negative")
    means, lows, highs = [], [], []
    start = 0
    for size in group_sizes(len(w), k):
        g = w[start:start + size]
        start += size
        # clamp guards the last-ulp rounding of a mean of equal values
        means.append(float(min(max(np.mean(g), g[0]), g[-1])))
        lows.append(float(g[0]))
        highs.append(float(g[-1]))
    cuts = [(highs[i] + lows[i + 1]) / 2.0 for i in range(k - 1)]
    edges = [0.0] + cuts + [highs[-1]]
    ranges = tuple((edges[i], edges[i + 1]) for i in range(k))
    return ClassMap("balanced", tuple(means), ranges)


def build_fixed(values: Sequence[float] = DEFAULT_FIXED) -> ClassMap:
    v = [float(x) for x in values]
    if len(v) < 2:
        raise InvalidK("a fixed ladder needs at least two values")
    if any(b <= a for a, b in zip(v, v[1:])):
        raise NonMonotonicValues(f"fixed values must be strictly increasing: {v}")
    edges = [v[0]] + [(a + b) / 2.0 for a, b in zip(v, v[1:])] + [v[-1]]
    return ClassMap("fixed", tuple(v), tuple((edges[i], edges[i + 1]) for i in range(len(v))))


def assign_training(samples: Iterable[tuple[str, float]], k: int) -> dict[str, int]:
    """Label training samples by their position in the (wer, id) sort order.

    Equal WERs on a group boundary can land in different classes; that is the
    price of exactly balanced class sizes.
    """
    items = sorted(((float(w), str(i)) for i, w in samples))
    _check(len(items), k)
    labels: dict[str, int] = {}
    pos = 0
    for cls, size in enumerate(group_sizes(len(items), k)):
        for _, uid in items[pos:pos + size]:
            labels[uid] = cls
        pos += size
    return labels


def assign(cmap: ClassMap, wer: float) -> int:
    return bisect.bisect_left(cmap.boundaries, wer)


def assign_many(cmap: ClassMap, wers: Iterable[float]) -> np.ndarray:
    return np.searchsorted(np.asarray(cmap.boundaries), np.asarray(list(wers), dtype=np.float64),
                           side="left").astype(np.int64)
