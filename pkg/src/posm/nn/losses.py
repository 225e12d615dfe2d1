from __future__ import annotations

import numpy as np

from .layers import sigmoid, softmax

PROB_EPS = 1e-12


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every element, and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(np.square(diff, dtype=np.float64))), (2.0 / diff.size) * diff


def masked_mse(pred: np.ndarray, target: np.ndarray, region: np.ndarray) -> float:
    """MSE restricted to cells where ``region`` is true (``nan`` if none are)."""
    region = np.broadcast_to(region, pred.shape)
    n = int(region.sum())
    if n == 0:
        return float("nan")
    return float(np.sum(np.square(pred - target, dtype=np.float64)[region]) / n)


def cross_entropy_loss(probs: np.ndarray, target: np.ndarray, kind: str = "categorical"
                       ) -> tuple[float, np.ndarray]:
    """Cross-entropy of probabilities against one-hot targets, and its gradient.

    ``categorical`` averages ``-sum(y log p)`` over the batch; ``binary``
    averages the per-unit binary term over every element.
    """
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch {probs.shape} vs {target.shape}")
    p = np.clip(probs.astype(np.float64), PROB_EPS, 1 - PROB_EPS)
    y = target.astype(np.float64)
    if kind == "categorical":
        n = probs.shape[0]
        loss = -np.sum(y * np.log(p)) / n
        grad = -y / p / n
    elif kind == "binary":
        n = probs.size
        loss = -np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)) / n
        grad = (p - y) / (p * (1 - p)) / n
    else:
        raise ValueError(f"unknown cross-entropy kind {kind!r}")
    return float(loss), grad.astype(probs.dtype)


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def cross_entropy_from_logits(logits: np.ndarray, target: np.ndarray, kind: str = "categorical"
                              ) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss, output probabilities and gradient w.r.t. the pre-activation logits.

    Same values as ``cross_entropy_loss`` on ``softmax``/``sigmoid`` outputs,
    but stable when units saturate.
    """
    z = logits.astype(np.float64)
    y = target.astype(np.float64)
    if kind == "categorical":
        n = z.shape[0]
        zs = z - z.max(axis=1, keepdims=True)
        logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        loss = -np.sum(y * logp) / n
        grad = (p - y) / n
    elif kind == "binary":
        n = z.size
        p = sigmoid(z)
        loss = -np.sum(y * _log_sigmoid(z) + (1 - y) * _log_sigmoid(-z)) / n
        grad = (p - y) / n
    else:
        raise ValueError(f"unknown cross-entropy kind {kind!r}")
    return float(loss), p.astype(logits.dtype), grad.astype(logits.dtype)


def output_probs(logits: np.ndarray, kind: str) -> np.ndarray:
    return softmax(logits) if kind == "categorical" else sigmoid(logits)
