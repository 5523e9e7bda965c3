"""Mini-batch training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ContractError, TrainingError
from .core import Module
from .losses import Loss
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    loss: str = "mse"
    gamma: float = 2.0
    alpha_f: float = 0.25
    shuffle: bool = True
    patience: int = 10
    min_delta: float = 1e-4
    class_weights: list[float] | None = None
    dtype: str = "float32"
    lr_schedule: str = "constant"  # or "cosine": decay to 0 over the epochs

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractError("batch_size must be >= 1 and epochs >= 0")
        if self.loss not in ("mse", "cross_entropy", "focal"):
            raise ContractError(f"unknown loss {self.loss!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ContractError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.gamma < 0 or not 0 < self.alpha_f <= 1:
            raise ContractError("focal loss needs gamma >= 0 and alpha_f in (0, 1]")

    def make_loss(self) -> Loss:
        return Loss(self.loss, self.gamma, self.alpha_f, self.class_weights)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopped_early: bool = False


def _as_tuple(x) -> tuple[np.ndarray, ...]:
    return tuple(x) if isinstance(x, (list, tuple)) else (x,)


def evaluate_loss(model: Module, inputs, targets, loss: Loss, batch_size: int = 256) -> float:
    xs = _as_tuple(inputs)
    n = len(targets)
    total = 0.0
    for s in range(0, n, batch_size):
        out = model.forward(*(x[s : s + batch_size] for x in xs))
        total += loss(out, targets[s : s + batch_size])[0] * min(batch_size, n - s)
    return total / n


def train(
    model: Module,
    inputs: Sequence[np.ndarray] | np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    val: tuple | None = None,
) -> tuple[Module, History]:
    """Train ``model`` in place with Adam; returns ``(model, history)``.

    ``inputs`` is one array or a sequence of arrays sharing the leading
    sample axis. Early stopping watches the validation loss when ``val``
    is given and the training loss otherwise, keeping the best weights.
    """
    xs = _as_tuple(inputs)
    targets = np.asarray(targets)
    n = len(targets)
    if n == 0:
        raise ContractError("training set is empty")
    if any(len(x) != n for x in xs):
        raise ContractError("inputs and targets disagree on the number of samples")
    dtype = np.dtype(config.dtype)
    model.astype(dtype)
    xs = tuple(np.asarray(x, dtype=dtype) for x in xs)
    loss = config.make_loss()
    opt = Adam(model, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    hist = History()
    best, best_params, stale = np.inf, None, 0
    for epoch in range(config.epochs):
        if config.lr_schedule == "cosine":
            opt.lr = 0.5 * config.lr * (1 + math.cos(math.pi * epoch / config.epochs))
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = np.sort(order[s : s + config.batch_size])
            opt.zero_grad()
            out = model.forward(*(x[idx] for x in xs))
            value, grad = loss(out, targets[idx])
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {s}")
            model.backward(grad)
            model.check_grads()
            opt.step()
            total += value * len(idx)
        hist.loss.append(total / n)
        monitor = hist.loss[-1]
        if val is not None:
            hist.val_loss.append(evaluate_loss(model, tuple(np.asarray(v, dtype=dtype) for v in _as_tuple(val[0])), val[1], loss))
            monitor = hist.val_loss[-1]
        log.debug("epoch %d loss %.5f", epoch, monitor)
        if monitor < best - config.min_delta:
            best, stale = monitor, 0
            best_params = [t.value.copy() for t in model.parameters()]
        else:
            stale += 1
            if stale >= config.patience:
                hist.stopped_early = True
                break
    if best_params is not None and val is not None:
        for t, v in zip(model.parameters(), best_params):
            t.value[...] = v
    return model, hist
