"""Classification and similarity losses with fused, hand-derived backward passes."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NonFiniteError
from .tensor import Tensor, cosine_similarity  # re-exported for convenience

__all__ = ["softmax", "softmax_cross_entropy", "softmax_cross_entropy_batch",
           "cosine_similarity"]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis of a plain array."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    """-log softmax(logits)[target], computed via log-sum-exp.

    Equals log(sum(exp(logits))) - logits[target] exactly; the shifted
    form below only protects against overflow.
    """
    if logits.data.ndim != 1:
        raise DimensionError(f"expected a logit vector, got shape {logits.data.shape}")
    m = logits.data.shape[0]
    if not 0 <= target_index < m:
        raise IndexError(f"target index {target_index} outside [0, {m})")
    if not np.isfinite(logits.data).all():
        raise NonFiniteError("logits contain NaN or Inf")
    shift = logits.data.max()
    lse = shift + np.log(np.exp(logits.data - shift).sum())
    out = Tensor(lse - logits.data[target_index])
    probs = softmax(logits.data)

    def backprop(g):
        grad = probs.copy()
        grad[target_index] -= 1.0
        logits._accumulate(float(g) * grad)

    out._record((logits,), backprop)
    return out


def softmax_cross_entropy_batch(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross entropy over rows of ``logits`` against integer ``targets``."""
    if logits.data.ndim != 2:
        raise DimensionError(f"expected a logit matrix, got shape {logits.data.shape}")
    targets = np.asarray(targets)
    n, m = logits.data.shape
    if targets.shape != (n,):
        raise DimensionError(f"targets shape {targets.shape} does not match batch size {n}")
    if targets.min() < 0 or targets.max() >= m:
        raise IndexError(f"target outside [0, {m})")
    if not np.isfinite(logits.data).all():
        raise NonFiniteError("logits contain NaN or Inf")
    shift = logits.data.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits.data - shift).sum(axis=1))
    picked = logits.data[np.arange(n), targets]
    out = Tensor((lse - picked).mean())
    probs = softmax(logits.data)

    def backprop(g):
        grad = probs.copy()
        grad[np.arange(n), targets] -= 1.0
        logits._accumulate((float(g) / n) * grad)

    out._record((logits,), backprop)
    return out
