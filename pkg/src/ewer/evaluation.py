"""Metrics, reports and hyperparameter sweeps over (config, seed) cells."""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np

from .binning import ClassMap, DEFAULT_FIXED, assign_many, assign_training, build_balanced, build_fixed, group_sizes
from .errors import EmptyCorpus, IndexOutOfRange, InputError, LengthMismatch, TooFewSamples
from .features.table import FeatureTable
from .model import (ModelConfig, ModelParams, TrainHistory, decode, err_ladder, ladder_labels, n_ladder,
                    predict_double, train)
from .objective import LossConfig
from .wer import Utterance, align

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def mae_rmse(pred, true) -> tuple[float, float]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(true, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} references")
    if p.size == 0:
        raise EmptyCorpus("no samples to score")
    d = p - t
    return float(np.mean(np.abs(d))), float(np.sqrt(np.mean(d * d)))


def confusion(pred_classes, true_classes, k: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    p = np.asarray(pred_classes, dtype=np.int64)
    t = np.asarray(true_classes, dtype=np.int64)
    if p.shape != t.shape:
        raise LengthMismatch("prediction and truth class vectors differ in length")
    if np.any(p < 0) or np.any(p >= k) or np.any(t < 0) or np.any(t >= k):
        raise IndexOutOfRange(f"class label outside [0, {k})")
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return m


def scale_rows(matrix: np.ndarray) -> np.ndarray:
    """Each non-empty row mapped linearly onto 1..100 for display; empty rows stay 0."""
    m = np.asarray(matrix, dtype=np.float64)
    out = np.zeros_like(m)
    for i, row in enumerate(m):
        lo, hi = row.min(), row.max()
        if hi > 0:
            out[i] = 1.0 + 99.0 * (row - lo) / (hi - lo) if hi > lo else 100.0
    return out


def mean_class_distance(matrix: np.ndarray) -> float:
    """Mean |true - predicted| class index over misclassified samples (0 if none)."""
    m = np.asarray(matrix)
    i, j = np.indices(m.shape)
    off = m * (i != j)
    total = off.sum()
    return float((off * np.abs(i - j)).sum() / total) if total else 0.0


class CurveRow(NamedTuple):
    bin: int
    true_mean: float
    pred_mean: float
    count: int


def binned_curve(pred, true, n_bins: int = 10) -> list[CurveRow]:
    """Equal-count bins over samples sorted by true WER (stable sort)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(true, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatch("prediction and truth vectors differ in length")
    if n_bins < 2:
        raise InputError("binned curve needs at least two bins")
    if t.size < n_bins:
        raise TooFewSamples(f"{t.size} samples cannot fill {n_bins} bins")
    order = np.argsort(t, kind="stable")
    rows, start = [], 0
    for b, size in enumerate(group_sizes(t.size, n_bins)):
        idx = order[start:start + size]
        start += size
        rows.append(CurveRow(b, float(t[idx].mean()), float(p[idx].mean()), int(size)))
    return rows


@dataclass
class EvalReport:
    mae: float
    rmse: float
    n: int
    confusion: np.ndarray
    binned_curve: list[CurveRow]
    per_seed: list[tuple[int, float, float]] | None = None

    @property
    def class_distance(self) -> float:
        return mean_class_distance(self.confusion)


def evaluate(pred_wer, true_wer, pred_classes, true_classes, k: int, n_bins: int = 10) -> EvalReport:
    mae, rmse = mae_rmse(pred_wer, true_wer)
    bins = min(n_bins, len(np.atleast_1d(true_wer)))
    curve = binned_curve(pred_wer, true_wer, bins) if bins >= 2 else []
    return EvalReport(mae, rmse, len(np.atleast_1d(true_wer)), confusion(pred_classes, true_classes, k), curve)


# datasets and training cells

@dataclass
class Split:
    table: FeatureTable
    wer: np.ndarray
    err: np.ndarray
    n_ref: np.ndarray

    def __len__(self) -> int:
        return len(self.table)

    @classmethod
    def from_corpus(cls, corpus: Sequence[Utterance], table: FeatureTable) -> "Split":
        if [u.id for u in corpus] != table.ids:
            raise InputError("feature table rows do not match corpus order")
        al = [align(u.reference, u.hypothesis) for u in corpus]
        if any(a.degenerate for a in al):
            raise InputError("corpus contains utterances with empty references")
        return cls(table, np.array([100.0 * a.err / a.n_ref for a in al]),
                   np.array([a.err for a in al], dtype=np.int64), np.array([a.n_ref for a in al], dtype=np.int64))


@dataclass
class Dataset:
    train: Split
    dev: Split
    test: Split | None = None


@dataclass(frozen=True)
class BinningSpec:
    kind: Literal["balanced", "fixed"] = "balanced"
    k: int = 15
    values: tuple[float, ...] = DEFAULT_FIXED

    @property
    def n_classes(self) -> int:
        return self.k if self.kind == "balanced" else len(self.values)


def class_labels(spec: BinningSpec, ids: Sequence[str], wers) -> tuple[ClassMap, np.ndarray]:
    """Class map from training WERs plus the training labels it implies."""
    wers = np.asarray(wers, dtype=np.float64)
    if spec.kind == "balanced":
        cmap = build_balanced(wers, spec.k)
        by_id = assign_training(zip(ids, wers), spec.k)
        return cmap, np.array([by_id[i] for i in ids], dtype=np.int64)
    if spec.kind == "fixed":
        cmap = build_fixed(spec.values)
        return cmap, assign_many(cmap, wers)
    raise InputError(f"unknown binning kind {spec.kind!r}")


def make_labels(spec: BinningSpec, split: Split) -> tuple[ClassMap, np.ndarray]:
    return class_labels(spec, split.table.ids, split.wer)


@dataclass
class RunResult:
    seed: int
    mae: float
    rmse: float
    pred: np.ndarray
    true: np.ndarray
    pred_class: np.ndarray | None = None
    true_class: np.ndarray | None = None
    k: int | None = None
    params: ModelParams | None = field(default=None, repr=False)
    history: TrainHistory | None = field(default=None, repr=False)

    def confusion(self) -> np.ndarray:
        return confusion(self.pred_class, self.true_class, self.k)

    def class_distance(self) -> float:
        return mean_class_distance(self.confusion())


def run_single(data: Dataset, config: ModelConfig, spec: BinningSpec = BinningSpec()) -> RunResult:
    cmap, labels = make_labels(spec, data.train)
    config = dataclasses.replace(config, k=cmap.k, task="single")
    params, history = train(data.train.table, labels, data.dev.table, data.dev.wer, config, cmap)
    _, pred, pred_cls = decode(params, data.test.table)
    mae, rmse = mae_rmse(pred, data.test.wer)
    return RunResult(config.seed, mae, rmse, pred, data.test.wer, pred_cls,
                     assign_many(cmap, data.test.wer), cmap.k, params, history)


def train_double(data: Dataset, config: ModelConfig, max_err: int = 19,
                 n_range: tuple[int, int] = (2, 47)) -> list[tuple[ModelParams, TrainHistory]]:
    """Two independent heads (ERR ladder, word-count ladder) with cross-entropy.

    Returns ``[(err_params, err_history), (n_params, n_history)]``.
    """
    heads = []
    for target, ladder, counts, dev_counts in (
            ("err", err_ladder(max_err), data.train.err, data.dev.err),
            ("n", n_ladder(*n_range), data.train.n_ref, data.dev.n_ref)):
        cfg = dataclasses.replace(config, k=ladder.k, task="double", loss=LossConfig("cross_entropy", 0.0))
        heads.append(train(data.train.table, ladder_labels(ladder, counts), data.dev.table, dev_counts,
                           cfg, ladder, target))
    return heads


def run_double(data: Dataset, config: ModelConfig, max_err: int = 19,
               n_range: tuple[int, int] = (2, 47)) -> RunResult:
    (err_p, _), (n_p, _) = train_double(data, config, max_err, n_range)
    pred = predict_double(err_p, n_p, data.test.table)
    mae, rmse = mae_rmse(pred, data.test.wer)
    return RunResult(config.seed, mae, rmse, pred, data.test.wer)


class SweepRow(NamedTuple):
    param: str
    seed: int
    mae: float
    rmse: float


class SweepSummary(NamedTuple):
    param: str
    mae: float
    rmse: float


def _cell(args) -> SweepRow:
    data, config, spec, label, double = args
    r = run_double(data, config) if double else run_single(data, config, spec)
    return SweepRow(label, config.seed, r.mae, r.rmse)


def _run_cells(cells: list, workers: int) -> list[SweepRow]:
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_cell, cells))
    return [_cell(c) for c in cells]


def _label(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def summarize(rows: Iterable[SweepRow]) -> list[SweepSummary]:
    groups: dict[str, list[SweepRow]] = {}
    for r in rows:
        groups.setdefault(r.param, []).append(r)
    return [SweepSummary(p, float(np.mean([r.mae for r in g])), float(np.mean([r.rmse for r in g])))
            for p, g in groups.items()]


def sweep_alpha(data: Dataset, config: ModelConfig, alphas: Sequence[float],
                seeds: Sequence[int] = DEFAULT_SEEDS, spec: BinningSpec = BinningSpec(),
                workers: int = 1) -> list[SweepRow]:
    """One balanced single-task model per (alpha, seed); alpha 0 is plain cross-entropy."""
    if not alphas:
        raise InputError("alpha sweep needs at least one value")
    cells = []
    for a in alphas:
        loss = LossConfig("distance", float(a)) if a > 0 else LossConfig("cross_entropy", 0.0)
        for s in seeds:
            cells.append((data, dataclasses.replace(config, loss=loss, seed=int(s)), spec, _label(float(a)), False))
    return _run_cells(cells, workers)


def sweep_k(data: Dataset, config: ModelConfig, ks: Sequence[int], seeds: Sequence[int] = DEFAULT_SEEDS,
            fixed_values: Sequence[float] | None = DEFAULT_FIXED, workers: int = 1) -> list[SweepRow]:
    """Balanced maps for each k, followed by the fixed-ladder baseline rows (param ``fixed``)."""
    if not ks:
        raise InputError("k sweep needs at least one value")
    if max(ks) > len(data.train):
        raise TooFewSamples(f"k={max(ks)} exceeds {len(data.train)} training samples")
    cells = []
    for k in ks:
        for s in seeds:
            cells.append((data, dataclasses.replace(config, seed=int(s)), BinningSpec("balanced", int(k)),
                          str(int(k)), False))
    if fixed_values is not None:
        spec = BinningSpec("fixed", len(fixed_values), tuple(float(v) for v in fixed_values))
        for s in seeds:
            cells.append((data, dataclasses.replace(config, seed=int(s)), spec, "fixed", False))
    return _run_cells(cells, workers)


# CSV outputs; '.' decimals come from repr() and never depend on locale

def _writer(path: str | Path, header: Sequence[str]):
    f = open(path, "w", encoding="utf-8", newline="")
    w = csv.writer(f, lineterminator="\n")
    w.writerow(header)
    return f, w


def fmt_num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_report(path: str | Path, report: EvalReport, name: str = "test") -> None:
    f, w = _writer(path, ["metric", "name", "value"])
    with f:
        w.writerow(["mae", name, fmt_num(report.mae)])
        w.writerow(["rmse", name, fmt_num(report.rmse)])
        w.writerow(["n", name, fmt_num(report.n)])
        w.writerow(["class_distance", name, fmt_num(report.class_distance)])
        for seed, mae, rmse in report.per_seed or ():
            w.writerow(["mae", f"seed{seed}", fmt_num(mae)])
            w.writerow(["rmse", f"seed{seed}", fmt_num(rmse)])


def write_confusion(path: str | Path, matrix: np.ndarray) -> None:
    k = matrix.shape[1]
    f, w = _writer(path, [f"pred{j}" for j in range(k)])
    with f:
        for row in matrix:
            w.writerow([fmt_num(int(v)) for v in row])


def write_curve(path: str | Path, rows: Iterable[CurveRow]) -> None:
    f, w = _writer(path, ["bin", "true_mean", "pred_mean", "count"])
    with f:
        for r in rows:
            w.writerow([fmt_num(r.bin), fmt_num(r.true_mean), fmt_num(r.pred_mean), fmt_num(r.count)])


def write_sweep(path: str | Path, rows: Iterable[SweepRow]) -> None:
    f, w = _writer(path, ["param", "seed", "mae", "rmse"])
    with f:
        for r in rows:
            w.writerow([r.param, fmt_num(r.seed), fmt_num(r.mae), fmt_num(r.rmse)])


def write_history(path: str | Path, history: TrainHistory) -> None:
    f, w = _writer(path, ["epoch", "train_loss", "dev_mae", "dev_rmse"])
    with f:
        for epoch, loss, mae, rmse in history.rows():
            w.writerow([fmt_num(epoch), fmt_num(loss), fmt_num(mae), fmt_num(rmse)])
