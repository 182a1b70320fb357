"""Expected-WER decoding and the ordinal distance loss.

All functions accept a single vector or a batch (leading axis = samples).
Inside the loss, class values are fractions (0..1.5), so alpha=50 keeps its
calibrated meaning; callers convert percent ladders with ``/ 100``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import IndexOutOfRange, InputError, LengthMismatch, NonFiniteInput

PROB_FLOOR = 1e-12
DEFAULT_ALPHA = 50.0


@dataclass(frozen=True)
class LossConfig:
    kind: Literal["cross_entropy", "distance"] = "distance"
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "distance"):
            raise InputError(f"unknown loss kind {self.kind!r}")
        if not self.alpha >= 0:
            raise InputError(f"alpha must be non-negative, got {self.alpha}")

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.kind == "distance" else 0.0


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    expected_wer: float
    argmax_class: int


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("softmax input contains NaN or infinity")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def expected_wer(probs, wer_fixed) -> np.ndarray | float:
    """Dot product of class probabilities with the class value ladder."""
    p = np.asarray(probs, dtype=np.float64)
    w = np.asarray(wer_fixed, dtype=np.float64)
    if p.shape[-1] != w.shape[-1]:
        raise LengthMismatch(f"{p.shape[-1]} probabilities vs {w.shape[-1]} class values")
    out = p @ w
    return float(out) if out.ndim == 0 else out


def _targets(true_class, k: int, batch: bool) -> np.ndarray:
    t = np.asarray(true_class)
    if not np.issubdtype(t.dtype, np.integer):
        raise IndexOutOfRange("class labels must be integers")
    if np.any(t < 0) or np.any(t >= k):
        raise IndexOutOfRange(f"class label outside [0, {k})")
    if batch and t.ndim != 1:
        raise LengthMismatch("batched probabilities need a 1-d label vector")
    return t


def _pick(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    if p.ndim == 1:
        return p[t]
    return p[np.arange(len(t)), t]


def cross_entropy(probs, true_class):
    p = np.asarray(probs, dtype=np.float64)
    t = _targets(true_class, p.shape[-1], p.ndim == 2)
    out = -np.log(np.maximum(_pick(p, t), PROB_FLOOR))
    return float(out) if np.ndim(out) == 0 else out


def distance_gap(probs, true_class, wer_fixed):
    """|p . w - w[true]|: how far the decoded value sits from the true class value."""
    p = np.asarray(probs, dtype=np.float64)
    w = np.asarray(wer_fixed, dtype=np.float64)
    t = _targets(true_class, p.shape[-1], p.ndim == 2)
    return np.abs(expected_wer(p, w) - w[t])


def distance_loss(probs, true_class, wer_fixed, alpha: float = DEFAULT_ALPHA):
    out = cross_entropy(probs, true_class) + alpha * distance_gap(probs, true_class, wer_fixed)
    return float(out) if np.ndim(out) == 0 else out


def distance_loss_grad(logits, true_class, wer_fixed, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Gradient of ``distance_loss(softmax(logits), ...)`` with respect to the logits.

    Uses the subgradient 0 for the absolute value at a zero gap.
    """
    p = softmax(logits)
    w = np.asarray(wer_fixed, dtype=np.float64)
    if p.shape[-1] != w.shape[-1]:
        raise LengthMismatch(f"{p.shape[-1]} logits vs {w.shape[-1]} class values")
    t = _targets(true_class, p.shape[-1], p.ndim == 2)
    grad = p.copy()
    if p.ndim == 1:
        grad[t] -= 1.0
    else:
        grad[np.arange(len(t)), t] -= 1.0
    if alpha:
        e = p @ w
        s = np.sign(e - w[t])
        # softmax Jacobian transposed times w: p * (w - p.w)
        jw = p * (w - e[..., None])
        grad += alpha * s[..., None] * jw
    return grad
