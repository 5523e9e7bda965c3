"""Central finite-difference gradient checking in double precision."""

from __future__ import annotations

import copy
from typing import Callable, Sequence

import numpy as np

from .core import Module


def _rel_err(a: np.ndarray, n: np.ndarray) -> float:
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))


def grad_check(
    model: Module,
    inputs: Sequence[np.ndarray] | np.ndarray,
    loss: Callable | None = None,
    target=None,
    eps: float = 1e-5,
    check_inputs: bool = True,
) -> float:
    """Max relative error between analytic and numerical gradients.

    Works on a float64 copy of ``model``. ``loss(output, target)`` must
    return ``(value, grad)``; by default the loss is ``sum(output * r)``
    for a fixed random ``r``, which exercises every output element.
    Relative error is ``|a - n| / max(|a|, |n|)`` per tensor.
    """
    m = copy.deepcopy(model).astype(np.float64)
    xs = [np.array(x, dtype=np.float64) for x in (inputs if isinstance(inputs, (list, tuple)) else [inputs])]
    if loss is None:
        probe = m.forward(*xs)
        r = np.random.default_rng(0).standard_normal(probe.shape)
        loss = lambda out, _t: (float(np.sum(out * r)), r)  # noqa: E731

    def value():
        return loss(m.forward(*xs), target)[0]

    m.zero_grad()
    out = m.forward(*xs)
    _, g = loss(out, target)
    dx = m.backward(g)
    dx = list(dx) if isinstance(dx, tuple) else [dx]

    worst = 0.0
    pairs = [(t.value, t.grad.copy()) for t in m.parameters()]
    if check_inputs:
        pairs += list(zip(xs, dx))
    for arr, analytic in pairs:
        num = np.zeros_like(arr)
        flat, nflat = arr.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = value()
            flat[i] = old - eps
            fm = value()
            flat[i] = old
            nflat[i] = (fp - fm) / (2 * eps)
        worst = max(worst, _rel_err(np.asarray(analytic).reshape(num.shape), num))
    return worst
