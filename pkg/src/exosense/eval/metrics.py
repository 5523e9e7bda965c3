"""Pure metric functions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ContractError, ShapeError

MISS_WINDOW_S = 1.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def rmse(pred, target) -> float:
    p, t = _pair(pred, target)
    if p.size == 0:
        raise ContractError("rmse of an empty series")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def pearson(a, b) -> float:
    x, y = _pair(a, b)
    if x.size < 2:
        raise ContractError("pearson needs at least two samples")
    x, y = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.sum(x * x)), np.sqrt(np.sum(y * y))
    if sx == 0 or sy == 0:
        raise ContractError("correlation is undefined for a constant input")
    return float(np.clip(np.sum(x * y) / (sx * sy), -1.0, 1.0))


def confusion(preds, labels, n_classes: int) -> np.ndarray:
    """``m[i, j]`` = number of samples with label ``i`` predicted as ``j``."""
    p, y = np.asarray(preds, dtype=np.int64).ravel(), np.asarray(labels, dtype=np.int64).ravel()
    if p.shape != y.shape:
        raise ShapeError(f"length mismatch: {p.size} vs {y.size}")
    for arr in (p, y):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ContractError(f"class out of range for {n_classes} classes")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (y, p), 1)
    return m


def _safe_div(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


def precision_recall_f1(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tp = np.diag(m).astype(np.float64)
    prec = _safe_div(tp, m.sum(axis=0))
    rec = _safe_div(tp, m.sum(axis=1))
    f1 = _safe_div(2 * prec * rec, prec + rec)
    return prec, rec, f1


def f1_per_class(preds, labels, n_classes: int) -> np.ndarray:
    return precision_recall_f1(confusion(preds, labels, n_classes))[2]


def accuracy(preds, labels) -> float:
    p, y = np.asarray(preds).ravel(), np.asarray(labels).ravel()
    if p.shape != y.shape or p.size == 0:
        raise ShapeError("accuracy needs equal-length, non-empty inputs")
    return float(np.mean(p == y))


def recall(preds, labels, positive=1) -> float:
    """TP / (TP + FN) for ``positive``; 0 when the class never occurs."""
    p, y = np.asarray(preds).ravel(), np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise ShapeError(f"length mismatch: {p.size} vs {y.size}")
    pos = y == positive
    return float(np.sum(p[pos] == positive) / pos.sum()) if pos.any() else 0.0


@dataclass
class DelayResult:
    delays_ms: list[float] = field(default_factory=list)
    detected: list[float] = field(default_factory=list)  # onsets
    missed: list[float] = field(default_factory=list)
    false_alarms: list[float] = field(default_factory=list)  # output times

    @property
    def recall(self) -> float:
        n = len(self.detected) + len(self.missed)
        return len(self.detected) / n if n else 0.0


def detection_delay(
    onsets_s: Sequence[float],
    output_t_s: Sequence[float],
    output_positive: Sequence[bool],
    miss_window_s: float = MISS_WINDOW_S,
) -> DelayResult:
    """Per-event delay of the first positive output at or after onset.

    Events with no positive within ``miss_window_s`` are misses. Positives
    with no onset in the preceding ``miss_window_s`` are false alarms.
    """
    onsets = np.sort(np.asarray(onsets_s, dtype=np.float64))
    t = np.asarray(output_t_s, dtype=np.float64)
    pos_t = np.sort(t[np.asarray(output_positive, dtype=bool)])
    res = DelayResult()
    tol = 1e-9
    for onset in onsets:
        i = np.searchsorted(pos_t, onset - tol)
        if i < len(pos_t) and pos_t[i] - onset <= miss_window_s + tol:
            res.detected.append(float(onset))
            res.delays_ms.append(float(round((pos_t[i] - onset) * 1000.0, 6)))
        else:
            res.missed.append(float(onset))
    for tp in pos_t:
        j = np.searchsorted(onsets, tp + tol, side="right") - 1
        if j < 0 or tp - onsets[j] > miss_window_s + tol:
            res.false_alarms.append(float(tp))
    return res
