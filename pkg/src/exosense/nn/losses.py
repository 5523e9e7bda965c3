"""Losses. Each returns the scalar loss; the ``*_grad`` companions return
the gradient with respect to the network output. Log-losses clamp
probabilities to ``[1e-7, 1 - 1e-7]``."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, ShapeError
from .layers import sigmoid

EPS = 1e-7


def mse_loss(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target) -> np.ndarray:
    pred = np.asarray(pred)
    return (2.0 / pred.size) * (pred - np.asarray(target, dtype=pred.dtype))


def _batch_logits(logits, labels):
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    single = logits.ndim == 1
    if single:
        logits, labels = logits[None], labels.reshape(1)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ContractError("logits must be finite")
    labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ContractError(f"label out of range for {logits.shape[1]} classes")
    return logits, labels, single


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels, class_weights=None) -> float:
    """Mean of ``-w[y] * log softmax(logits)[y]`` (weights default to 1)."""
    z, y, _ = _batch_logits(logits, labels)
    logp = _log_softmax(z.astype(np.float64))[np.arange(len(y)), y]
    w = np.ones(len(y)) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[y]
    return float(np.mean(-w * np.maximum(logp, np.log(EPS))))


def softmax_cross_entropy_grad(logits, labels, class_weights=None) -> np.ndarray:
    z, y, single = _batch_logits(logits, labels)
    logp = _log_softmax(z)
    p = np.exp(logp)
    idx = np.arange(len(y))
    g = p.copy()
    g[idx, y] -= 1.0
    w = np.ones(len(y)) if class_weights is None else np.asarray(class_weights)[y]
    # clamped samples contribute no gradient
    w = np.where(logp[idx, y] > np.log(EPS), w, 0.0)
    g *= (w / len(y))[:, None]
    g = g.astype(z.dtype, copy=False)
    return g[0] if single else g


def _focal_terms(probs, labels, gamma, alpha_f):
    if gamma < 0:
        raise ContractError(f"gamma must be >= 0, got {gamma}")
    if not 0 < alpha_f <= 1:
        raise ContractError(f"alpha_f must lie in (0, 1], got {alpha_f}")
    p = np.atleast_1d(np.asarray(probs, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    if p.shape != y.shape:
        raise ShapeError(f"probs shape {p.shape} != labels shape {y.shape}")
    pos = y.astype(bool)
    pt_raw = np.where(pos, p, 1.0 - p)
    pt = np.clip(pt_raw, EPS, 1.0 - EPS)
    at = np.where(pos, alpha_f, 1.0 - alpha_f)
    return pt_raw, pt, at, pos


def focal_loss(probs, labels, gamma: float = 2.0, alpha_f: float = 0.25) -> float:
    """Binary focal loss on positive-class probabilities:
    mean of ``-a_t (1 - p_t)^gamma log p_t``."""
    _, pt, at, _ = _focal_terms(probs, labels, gamma, alpha_f)
    return float(np.mean(-at * (1.0 - pt) ** gamma * np.log(pt)))


def focal_loss_logits(logits, labels, gamma: float = 2.0, alpha_f: float = 0.25) -> float:
    """Focal loss on two-class logits (column 1 is the positive class)."""
    z, y, _ = _batch_logits(logits, labels)
    if z.shape[1] != 2:
        raise ShapeError("focal loss expects two logits per sample")
    return focal_loss(sigmoid(z[:, 1] - z[:, 0]), y, gamma, alpha_f)


def focal_loss_logits_grad(logits, labels, gamma: float = 2.0, alpha_f: float = 0.25) -> np.ndarray:
    z, y, single = _batch_logits(logits, labels)
    if z.shape[1] != 2:
        raise ShapeError("focal loss expects two logits per sample")
    p1 = sigmoid((z[:, 1] - z[:, 0]).astype(np.float64))
    pt_raw, pt, at, pos = _focal_terms(p1, y, gamma, alpha_f)
    q = 1.0 - pt
    # dL/dp_t; q >= EPS keeps q**(gamma - 1) finite for gamma < 1
    dq = gamma * q ** (gamma - 1.0) if gamma > 0 else 0.0
    dpt = -at * (-dq * np.log(pt) + q**gamma / pt)
    dpt = np.where((pt_raw > EPS) & (pt_raw < 1.0 - EPS), dpt, 0.0)
    # p_t = sigmoid(s * (z1 - z0)), s = +1 for positives
    s = np.where(pos, 1.0, -1.0)
    dd = dpt * pt_raw * (1.0 - pt_raw) * s / len(y)
    g = np.stack([-dd, dd], axis=1).astype(z.dtype, copy=False)
    return g[0] if single else g


class Loss:
    """Callable loss returning ``(value, grad)`` for a network output."""

    def __init__(self, kind: str = "mse", gamma: float = 2.0, alpha_f: float = 0.25, class_weights=None):
        if kind not in ("mse", "cross_entropy", "focal"):
            raise ContractError(f"unknown loss {kind!r}")
        if kind == "focal":
            _focal_terms(np.array([0.5]), np.array([1]), gamma, alpha_f)
        self.kind, self.gamma, self.alpha_f = kind, gamma, alpha_f
        self.class_weights = None if class_weights is None else np.asarray(class_weights, dtype=np.float64)

    def __call__(self, output, target):
        if self.kind == "mse":
            target = np.asarray(target).reshape(output.shape)
            return mse_loss(output, target), mse_grad(output, target)
        if self.kind == "cross_entropy":
            return (
                softmax_cross_entropy(output, target, self.class_weights),
                softmax_cross_entropy_grad(output, target, self.class_weights),
            )
        return (
            focal_loss_logits(output, target, self.gamma, self.alpha_f),
            focal_loss_logits_grad(output, target, self.gamma, self.alpha_f),
        )
