"""Fusion classifier head: per-block projection and layer norm, concatenation,
a ReLU/dropout feed-forward stack and a softmax output over WER classes.

Everything is plain numpy with hand-written backpropagation. A parameter set
is a flat ``name -> array`` dict so the optimizer, gradient checks and the
checkpoint format can all treat it uniformly.
"""

from __future__ import annotations

import copy
import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Mapping, Sequence

import numpy as np

from .binning import ClassMap, assign_many, build_fixed
from .errors import (ChecksumMismatch, EmptyDataset, InputError, IoFailure, NonFiniteInput, NonFiniteLoss,
                     ShapeMismatch, UnsupportedFormat, VersionMismatch)
from .features.signal import EXTRACTORS
from .features.table import FeatureTable, FeatureVector
from .objective import LossConfig, Prediction, distance_gap, distance_loss_grad, cross_entropy, softmax

log = logging.getLogger(__name__)

FULL_HIDDEN = (512, 256, 128, 64)
DESK_HIDDEN = (64, 32)
LN_EPS = 1e-5
SIGNAL_BLOCKS = frozenset(EXTRACTORS)

Target = Literal["wer", "err", "n"]


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class ModelConfig:
    k: int = 15
    proj_dim: int = 32
    proj_dims: dict[str, int] = field(default_factory=dict)
    hidden: tuple[int, ...] = FULL_HIDDEN
    dropout: float = 0.1
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    task: Literal["single", "double"] = "single"
    l2: float = 1e-4

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if self.k < 2:
            raise InputError(f"k must be >= 2, got {self.k}")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError(f"dropout must lie in [0, 1), got {self.dropout}")
        dims = [self.proj_dim, *self.proj_dims.values(), *self.hidden]
        if any(d < 1 for d in dims) or self.proj_dim < 2 or any(d < 2 for d in self.proj_dims.values()):
            raise InputError("layer sizes must be positive and projections at least 2 wide")
        if self.batch_size < 1 or self.epochs < 0:
            raise InputError("batch_size must be >= 1 and epochs >= 0")
        if self.task not in ("single", "double"):
            raise InputError(f"unknown task {self.task!r}")

    def projection(self, block: str) -> int:
        return self.proj_dims.get(block, self.proj_dim)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**dict(d))

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        return cls(**{"hidden": DESK_HIDDEN, **overrides})


@dataclass
class ModelParams:
    config: ModelConfig
    layout: list[tuple[str, int]]
    class_map: ClassMap
    tensors: dict[str, np.ndarray]
    target: Target = "wer"

    @property
    def k(self) -> int:
        return self.class_map.k

    @property
    def blocks(self) -> list[str]:
        return [b for b, _ in self.layout]

    def learnable(self) -> list[str]:
        return [n for n in self.tensors if not n.startswith("in.")]

    def class_values(self) -> np.ndarray:
        """Ladder used for decoding, in reporting units (percent or counts)."""
        return self.class_map.values

    def loss_values(self) -> np.ndarray:
        # fractions inside the loss for WER ladders
        return self.class_map.values / 100.0 if self.target == "wer" else self.class_map.values

    def copy(self) -> "ModelParams":
        return ModelParams(copy.deepcopy(self.config), list(self.layout), self.class_map,
                           {n: a.copy() for n, a in self.tensors.items()}, self.target)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    dev_mae: list[float] = field(default_factory=list)
    dev_rmse: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def rows(self):
        return zip(range(1, len(self.train_loss) + 1), self.train_loss, self.dev_mae, self.dev_rmse)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init(config: ModelConfig, layout: Sequence[tuple[str, int]], class_map: ClassMap,
         seed: int | None = None, target: Target = "wer") -> ModelParams:
    if class_map.k != config.k:
        raise ShapeMismatch(f"config has k={config.k} but class map has {class_map.k} classes")
    if not layout:
        raise ShapeMismatch("at least one feature block is required")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    t: dict[str, np.ndarray] = {}
    for name, dim in layout:
        t[f"in.{name}.mean"] = np.zeros(dim)
        t[f"in.{name}.scale"] = np.ones(dim)
    width = 0
    for name, dim in layout:
        p = config.projection(name)
        t[f"proj.{name}.W"] = _glorot(rng, dim, p)
        t[f"proj.{name}.b"] = np.zeros(p)
        t[f"norm.{name}.g"] = np.ones(p)
        t[f"norm.{name}.b"] = np.zeros(p)
        width += p
    for i, h in enumerate(config.hidden):
        t[f"hidden.{i}.W"] = _glorot(rng, width, h)
        t[f"hidden.{i}.b"] = np.zeros(h)
        width = h
    t["out.W"] = _glorot(rng, width, config.k)
    t["out.b"] = np.zeros(config.k)
    return ModelParams(config, [(n, int(d)) for n, d in layout], class_map, t, target)


def fit_input_scaling(params: ModelParams, table: FeatureTable) -> None:
    """Standardize each input column with training-split statistics (constant columns pass through)."""
    for name, _ in params.layout:
        x = table.blocks[name]
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        params.tensors[f"in.{name}.mean"] = mean
        safe = np.where(std > 1e-12, std, 1.0)
        params.tensors[f"in.{name}.scale"] = 1.0 / safe


def _blocks_of(params: ModelParams, data) -> dict[str, np.ndarray]:
    if isinstance(data, FeatureVector):
        data = data.as_table()
    blocks = data.blocks if isinstance(data, FeatureTable) else data
    out = {}
    for name, dim in params.layout:
        if name not in blocks:
            raise ShapeMismatch(f"missing feature block {name!r}")
        x = np.asarray(blocks[name], dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != dim:
            raise ShapeMismatch(f"block {name!r} has width {x.shape[1]}, model expects {dim}")
        out[name] = x
    return out


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Per-row standardization; returns (normalized, 1/sigma)."""
    mu = x.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + eps)
    return (x - mu) * inv, inv


def scale_inputs(params: ModelParams, data) -> dict[str, np.ndarray]:
    blocks = _blocks_of(params, data)
    t = params.tensors
    return {name: (x - t[f"in.{name}.mean"]) * t[f"in.{name}.scale"] for name, x in blocks.items()}


def _forward(params: ModelParams, data, train_mode: bool, rng: np.random.Generator | None,
             scaled: bool = False):
    t = params.tensors
    blocks = _blocks_of(params, data) if scaled else scale_inputs(params, data)
    cache = {"blocks": {}, "layers": []}
    parts = []
    for name, _ in params.layout:
        x = blocks[name]
        z = x @ t[f"proj.{name}.W"] + t[f"proj.{name}.b"]
        y, inv = layer_norm(z)
        parts.append(y * t[f"norm.{name}.g"] + t[f"norm.{name}.b"])
        cache["blocks"][name] = (x, y, inv)
    h = np.concatenate(parts, axis=1)
    rate = params.config.dropout
    for i in range(len(params.config.hidden)):
        z = h @ t[f"hidden.{i}.W"] + t[f"hidden.{i}.b"]
        a = np.maximum(z, 0.0)
        mask = None
        if train_mode and rate > 0:
            if rng is None:
                raise InputError("training-mode forward needs an rng for dropout")
            mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
            a = a * mask
        cache["layers"].append((h, z, mask))
        h = a
    cache["final"] = h
    return h @ t["out.W"] + t["out.b"], cache


def forward(params: ModelParams, data, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Logits with shape (n, k) for a FeatureTable, FeatureVector or block mapping."""
    return _forward(params, data, train_mode, rng)[0]


def _backward(params: ModelParams, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    t = params.tensors
    g: dict[str, np.ndarray] = {}
    h = cache["final"]
    g["out.W"] = h.T @ dlogits
    g["out.b"] = dlogits.sum(axis=0)
    dh = dlogits @ t["out.W"].T
    for i in reversed(range(len(params.config.hidden))):
        h_in, z, mask = cache["layers"][i]
        if mask is not None:
            dh = dh * mask
        dz = dh * (z > 0)
        g[f"hidden.{i}.W"] = h_in.T @ dz
        g[f"hidden.{i}.b"] = dz.sum(axis=0)
        dh = dz @ t[f"hidden.{i}.W"].T
    col = 0
    for name, _ in params.layout:
        x, y, inv = cache["blocks"][name]
        p = y.shape[1]
        dout = dh[:, col:col + p]
        col += p
        g[f"norm.{name}.g"] = (dout * y).sum(axis=0)
        g[f"norm.{name}.b"] = dout.sum(axis=0)
        dy = dout * t[f"norm.{name}.g"]
        dz = inv * (dy - dy.mean(axis=1, keepdims=True) - y * (dy * y).mean(axis=1, keepdims=True))
        g[f"proj.{name}.W"] = x.T @ dz
        g[f"proj.{name}.b"] = dz.sum(axis=0)
    return g


def _l2_names(params: ModelParams) -> list[str]:
    return [f"proj.{b}.W" for b in params.blocks if b in SIGNAL_BLOCKS] if params.config.l2 > 0 else []


def loss_and_grad(params: ModelParams, data, labels, train_mode: bool = False,
                  rng: np.random.Generator | None = None,
                  scaled: bool = False) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss (plus L2 on signal projections) and its gradient.

    ``scaled`` marks ``data`` as already standardized by :func:`scale_inputs`.
    """
    labels = np.asarray(labels, dtype=np.int64)
    logits, cache = _forward(params, data, train_mode, rng, scaled)
    w = params.loss_values()
    alpha = params.config.loss.effective_alpha
    probs = softmax(logits)
    n = len(labels)
    loss = float(np.mean(cross_entropy(probs, labels) + alpha * distance_gap(probs, labels, w)))
    grads = _backward(params, cache, distance_loss_grad(logits, labels, w, alpha) / n)
    for name in _l2_names(params):
        W = params.tensors[name]
        loss += params.config.l2 * float(np.sum(W * W))
        grads[name] = grads[name] + 2.0 * params.config.l2 * W
    return loss, grads


class Adam:
    def __init__(self, params: ModelParams, cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = {n: np.zeros_like(params.tensors[n]) for n in params.learnable()}
        self.v = {n: np.zeros_like(params.tensors[n]) for n in params.learnable()}
        self.step_count = 0

    def step(self, params: ModelParams, grads: Mapping[str, np.ndarray]) -> None:
        c = self.cfg
        self.step_count += 1
        b1t = 1.0 - c.beta1 ** self.step_count
        b2t = 1.0 - c.beta2 ** self.step_count
        step = c.lr / b1t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            denom = v / b2t
            np.sqrt(denom, out=denom)
            denom += c.epsilon
            np.divide(m, denom, out=denom)
            denom *= step
            params.tensors[name] -= denom


def decode(params: ModelParams, data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(probs, expected value, argmax class) in inference mode."""
    probs = softmax(forward(params, data))
    return probs, probs @ params.class_values(), probs.argmax(axis=1)


def _mae_rmse(pred: np.ndarray, true: np.ndarray) -> tuple[float, float]:
    d = pred - true
    return float(np.mean(np.abs(d))), float(np.sqrt(np.mean(d * d)))


def train(train_set: FeatureTable, labels, dev_set: FeatureTable | None, dev_targets,
          config: ModelConfig, class_map: ClassMap, target: Target = "wer") -> tuple[ModelParams, TrainHistory]:
    """Mini-batch Adam; keeps the parameters of the epoch with the lowest dev MAE.

    ``labels`` are class indices for ``train_set`` rows; ``dev_targets`` are
    true values in decoding units (percent WER, or counts for ladder heads).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(train_set) == 0:
        raise EmptyDataset("training set is empty")
    if len(labels) != len(train_set):
        raise ShapeMismatch(f"{len(labels)} labels for {len(train_set)} training rows")
    params = init(config, train_set.layout, class_map, config.seed, target)
    fit_input_scaling(params, train_set)
    history = TrainHistory()
    if config.epochs == 0:
        return params, history
    dev_targets = None if dev_set is None else np.asarray(dev_targets, dtype=np.float64)
    rng = np.random.default_rng([config.seed, 1])
    opt = Adam(params, config.optimizer)
    blocks = scale_inputs(params, train_set)
    n = len(train_set)
    best, best_mae = params.copy(), np.inf
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = {name: a[idx] for name, a in blocks.items()}
            try:
                loss, grads = loss_and_grad(params, batch, labels[idx], train_mode=True, rng=rng, scaled=True)
            except NonFiniteInput:
                loss = float("nan")
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss {loss} at epoch {epoch + 1}, batch starting at {start}")
            opt.step(params, grads)
            total += loss * len(idx)
        history.train_loss.append(total / n)
        if dev_set is not None and len(dev_set):
            _, pred, _ = decode(params, dev_set)
            mae, rmse = _mae_rmse(pred, dev_targets)
        else:
            mae, rmse = float("nan"), float("nan")
        history.dev_mae.append(mae)
        history.dev_rmse.append(rmse)
        if not (mae >= best_mae):  # nan (no dev set) always takes the latest epoch
            best, best_mae = params.copy(), mae
            history.best_epoch = epoch
        log.debug("epoch %d loss %.5f dev MAE %.4f", epoch + 1, total / n, mae)
    return best, history


def predict_single(params: ModelParams, fv: FeatureVector) -> Prediction:
    probs, ev, am = decode(params, fv)
    return Prediction(probs[0], float(ev[0]), int(am[0]))


def predict_batch(params: ModelParams, table: FeatureTable) -> list[Prediction]:
    probs, ev, am = decode(params, table)
    return [Prediction(probs[i], float(ev[i]), int(am[i])) for i in range(len(ev))]


# double task: independent ERR and N classifiers

def err_ladder(max_err: int = 19) -> ClassMap:
    return build_fixed([float(i) for i in range(max_err + 1)])


def n_ladder(min_n: int = 2, max_n: int = 47) -> ClassMap:
    return build_fixed([float(i) for i in range(min_n, max_n + 1)])


def ladder_labels(ladder: ClassMap, counts) -> np.ndarray:
    return assign_many(ladder, counts)


def predict_double(err_params: ModelParams, n_params: ModelParams, data) -> np.ndarray:
    """100 * ERR_est / N_est from the argmax class of each head."""
    _, _, err_cls = decode(err_params, data)
    _, _, n_cls = decode(n_params, data)
    err_est = err_params.class_values()[err_cls]
    n_est = np.maximum(n_params.class_values()[n_cls], 1.0)
    return 100.0 * err_est / n_est


# checkpoints

MAGIC = b"EWERMODL"
VERSION = 1


def to_bytes(params: ModelParams) -> bytes:
    meta = json.dumps({"config": params.config.to_dict(), "layout": params.layout, "target": params.target},
                      sort_keys=True).encode("utf-8")
    cmap = params.class_map.to_json().encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<B", VERSION)
    out += struct.pack("<I", len(meta)) + meta
    out += struct.pack("<I", len(cmap)) + cmap
    out += struct.pack("<I", len(params.tensors))
    for name, arr in params.tensors.items():
        b = name.encode("utf-8")
        out += struct.pack("<H", len(b)) + b + struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def save(params: ModelParams, path: str | Path) -> None:
    try:
        Path(path).write_bytes(to_bytes(params))
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint {path}: {e.strerror}") from e


def from_bytes(buf: bytes, expected_k: int | None = None) -> ModelParams:
    if buf[:8] != MAGIC:
        raise UnsupportedFormat("not an EWERMODL checkpoint")
    if len(buf) < 13:
        raise ChecksumMismatch("checkpoint truncated")
    if buf[8] != VERSION:
        raise VersionMismatch(f"checkpoint version {buf[8]}, this build reads {VERSION}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ChecksumMismatch("checkpoint CRC32 mismatch (corrupt or truncated file)")
    pos = 9
    (n,) = struct.unpack_from("<I", buf, pos)
    meta = json.loads(buf[pos + 4:pos + 4 + n].decode("utf-8"))
    pos += 4 + n
    (n,) = struct.unpack_from("<I", buf, pos)
    cmap = ClassMap.from_json(buf[pos + 4:pos + 4 + n].decode("utf-8"))
    pos += 4 + n
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + ln].decode("utf-8")
        pos += 2 + ln
        ndim = buf[pos]
        shape = struct.unpack_from(f"<{ndim}I", buf, pos + 1)
        pos += 1 + 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    config = ModelConfig.from_dict(meta["config"])
    params = ModelParams(config, [(b, int(d)) for b, d in meta["layout"]], cmap, tensors, meta["target"])
    _validate(params, expected_k)
    return params


def _validate(params: ModelParams, expected_k: int | None) -> None:
    if params.class_map.k != params.config.k:
        raise ShapeMismatch(f"config k={params.config.k} disagrees with class map k={params.class_map.k}")
    ref = init(params.config, params.layout, params.class_map, 0, params.target)
    if expected_k is not None and params.k != expected_k:
        raise ShapeMismatch(f"checkpoint has k={params.k}, expected {expected_k}")
    if set(ref.tensors) != set(params.tensors):
        raise ShapeMismatch("checkpoint tensor names do not match its configuration")
    for name, arr in ref.tensors.items():
        if params.tensors[name].shape != arr.shape:
            raise ShapeMismatch(f"tensor {name} has shape {params.tensors[name].shape}, expected {arr.shape}")
        if not np.all(np.isfinite(params.tensors[name])):
            raise ShapeMismatch(f"tensor {name} holds non-finite values")


def load(path: str | Path, expected_k: int | None = None) -> ModelParams:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read checkpoint {path}: {e.strerror}") from e
    try:
        return from_bytes(buf, expected_k)
    except struct.error:
        raise ChecksumMismatch(f"{path}: malformed checkpoint") from None
