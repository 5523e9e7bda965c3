"""Layers: causal dilated Conv1d, Linear, activations, pooling/readout,
squeeze-and-excitation, residual blocks, and multi-branch fusion.

Temporal tensors are ``(batch, channels, time)``; feature vectors are
``(batch, features)``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..errors import ShapeError
from .core import Module, Tensor


def _positions(t_in: int, stride: int) -> np.ndarray:
    # outputs aligned so the last output sees the last input sample
    return np.arange((t_in - 1) % stride, t_in, stride)


def conv1d(x, weight, bias=None, dilation: int = 1, stride: int = 1) -> np.ndarray:
    """Causal dilated 1-D convolution.

    ``y[c, t] = bias[c] + sum_{i,k} w[c, i, k] * x[i, t - (K-1-k) * dilation]``
    with zeros left of the signal. Accepts ``(C_in, T)`` or ``(B, C_in, T)``.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 2
    layer = Conv1d(weight.shape[1], weight.shape[0], weight.shape[2], dilation, stride)
    layer.params["weight"].value = np.asarray(weight, dtype=np.result_type(x, weight))
    if bias is not None:
        layer.params["bias"].value = np.asarray(bias, dtype=layer.params["weight"].value.dtype)
    else:
        layer.params["bias"].value = np.zeros(weight.shape[0], dtype=layer.params["weight"].value.dtype)
    y = layer.forward(x[None] if squeeze else x)
    return y[0] if squeeze else np.ascontiguousarray(y)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, dilation: int = 1, stride: int = 1, name: str = "conv"):
        super().__init__(name)
        if kernel < 1 or dilation < 1 or stride < 1:
            raise ShapeError(f"{name}: kernel, dilation and stride must be >= 1")
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.dilation, self.stride = dilation, stride
        self.params["weight"] = Tensor(np.zeros((c_out, c_in, kernel)))
        self.params["bias"] = Tensor(np.zeros(c_out))
        self._cache = None

    @property
    def receptive_field(self) -> int:
        return (self.kernel - 1) * self.dilation + 1

    def _init_own(self, rng):
        bound = 1.0 / math.sqrt(self.c_in * self.kernel)
        w, b = self.params["weight"], self.params["bias"]
        w.value = rng.uniform(-bound, bound, w.shape).astype(w.value.dtype)
        b.value = rng.uniform(-bound, bound, b.shape).astype(b.value.dtype)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.c_in:
            raise ShapeError(f"{self.name}: expected (B, {self.c_in}, T) input, got {x.shape}")
        w = self.params["weight"].value
        B, _, T = x.shape
        pad = (self.kernel - 1) * self.dilation
        xt = np.zeros((self.c_in, B, T + pad), dtype=w.dtype)
        xt[:, :, pad:] = x.transpose(1, 0, 2)
        d = self.dilation
        if self.stride == 1:
            pos = None
            cols = np.stack([xt[:, :, k * d : k * d + T] for k in range(self.kernel)], axis=1)
            t_out = T
        else:
            pos = _positions(T, self.stride)
            cols = np.stack([xt[:, :, k * d + pos] for k in range(self.kernel)], axis=1)
            t_out = len(pos)
        cols = cols.reshape(self.c_in * self.kernel, B * t_out)
        y = w.reshape(self.c_out, -1) @ cols
        y += self.params["bias"].value[:, None]
        self._cache = (cols, B, T, t_out, pos)
        return y.reshape(self.c_out, B, t_out).transpose(1, 0, 2)

    def backward(self, grad):
        cols, B, T, t_out, pos = self._cache
        w = self.params["weight"]
        g2 = grad.transpose(1, 0, 2).reshape(self.c_out, B * t_out)
        w.grad += (g2 @ cols.T).reshape(w.shape)
        self.params["bias"].grad += g2.sum(axis=1)
        dcols = (w.value.reshape(self.c_out, -1).T @ g2).reshape(self.c_in, self.kernel, B, t_out)
        pad = (self.kernel - 1) * self.dilation
        dxt = np.zeros((self.c_in, B, T + pad), dtype=dcols.dtype)
        d = self.dilation
        for k in range(self.kernel):
            if pos is None:
                dxt[:, :, k * d : k * d + T] += dcols[:, k]
            else:
                dxt[:, :, k * d + pos] += dcols[:, k]
        return dxt[:, :, pad:].transpose(1, 0, 2)


class AvgPool1d(Module):
    """Non-overlapping mean pooling over time. Blocks are aligned to the last
    sample, so output ``j`` only sees inputs up to its block end (causal);
    a leading remainder shorter than ``size`` is dropped."""

    def __init__(self, size: int, name: str = "pool"):
        super().__init__(name)
        if size < 1:
            raise ShapeError("pool size must be >= 1")
        self.size = size
        self._shape = None

    def forward(self, x):
        B, C, T = x.shape
        n = T // self.size
        if n == 0:
            raise ShapeError(f"{self.name}: input length {T} shorter than pool size {self.size}")
        self._shape = x.shape
        return x[:, :, T - n * self.size :].reshape(B, C, n, self.size).mean(axis=3)

    def backward(self, grad):
        B, C, T = self._shape
        n = grad.shape[2]
        dx = np.zeros(self._shape, dtype=grad.dtype)
        dx[:, :, T - n * self.size :] = np.repeat(grad / self.size, self.size, axis=2)
        return dx


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, name: str = "fc"):
        super().__init__(name)
        self.n_in, self.n_out = n_in, n_out
        self.params["weight"] = Tensor(np.zeros((n_out, n_in)))
        self.params["bias"] = Tensor(np.zeros(n_out))
        self._x = None

    def _init_own(self, rng):
        bound = 1.0 / math.sqrt(self.n_in)
        w, b = self.params["weight"], self.params["bias"]
        w.value = rng.uniform(-bound, bound, w.shape).astype(w.value.dtype)
        b.value = rng.uniform(-bound, bound, b.shape).astype(b.value.dtype)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"{self.name}: expected (B, {self.n_in}) input, got {x.shape}")
        self._x = x
        return x @ self.params["weight"].value.T + self.params["bias"].value

    def backward(self, grad):
        self.params["weight"].grad += grad.T @ self._x
        self.params["bias"].grad += grad.sum(axis=0)
        return grad @ self.params["weight"].value


class ReLU(Module):
    def __init__(self, name: str = "relu"):
        super().__init__(name)
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0).astype(grad.dtype, copy=False)


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Sigmoid(Module):
    def __init__(self, name: str = "sigmoid"):
        super().__init__(name)
        self._y = None

    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)


def softmax(x, axis: int = -1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Softmax(Module):
    def __init__(self, name: str = "softmax"):
        super().__init__(name)
        self._y = None

    def forward(self, x):
        self._y = softmax(x, axis=-1)
        return self._y

    def backward(self, grad):
        y = self._y
        return y * (grad - np.sum(grad * y, axis=-1, keepdims=True))


class Readout(Module):
    """Collapse time: ``gap`` (mean), ``last`` (final step), ``gap_last``
    (both, concatenated), or ``segments`` (mean over each fractional span)."""

    def __init__(self, mode: str = "gap", segments: Sequence[Sequence[float]] | None = None, name: str = "readout"):
        super().__init__(name)
        if mode not in ("gap", "last", "gap_last", "segments"):
            raise ShapeError(f"unknown readout mode {mode!r}")
        if mode == "segments" and not segments:
            raise ShapeError("segments readout needs at least one span")
        self.mode = mode
        self.segments = [tuple(s) for s in segments] if segments else None
        self._shape = None

    def _spans(self, T):
        spans = []
        for a, b in self.segments:
            i0, i1 = int(round(a * T)), int(round(b * T))
            if i1 <= i0:
                raise ShapeError(f"segment {a}-{b} is empty for length {T}")
            spans.append((i0, i1))
        return spans

    def forward(self, x):
        self._shape = x.shape
        if self.mode == "gap":
            return x.mean(axis=2)
        if self.mode == "last":
            return np.ascontiguousarray(x[:, :, -1])
        if self.mode == "gap_last":
            return np.concatenate([x.mean(axis=2), x[:, :, -1]], axis=1)
        return np.concatenate([x[:, :, i0:i1].mean(axis=2) for i0, i1 in self._spans(x.shape[2])], axis=1)

    def backward(self, grad):
        B, C, T = self._shape
        dx = np.zeros(self._shape, dtype=grad.dtype)
        if self.mode == "gap":
            dx += grad[:, :, None] / T
        elif self.mode == "last":
            dx[:, :, -1] = grad
        elif self.mode == "gap_last":
            dx += grad[:, :C, None] / T
            dx[:, :, -1] += grad[:, C:]
        else:
            for j, (i0, i1) in enumerate(self._spans(T)):
                dx[:, :, i0:i1] += grad[:, j * C : (j + 1) * C, None] / (i1 - i0)
        return dx

    def out_features(self, channels: int) -> int:
        return channels * {"gap": 1, "last": 1, "gap_last": 2}.get(self.mode, len(self.segments or ()))


class Sequential(Module):
    def __init__(self, layers: Sequence[Module], name: str = ""):
        super().__init__(name)
        self.children = list(layers)

    def forward(self, x):
        for layer in self.children:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.children):
            grad = layer.backward(grad)
        return grad


class SEBlock(Module):
    """Squeeze-and-excitation: ``y = x * sigmoid(fc2(relu(fc1(squeeze(x)))))``.

    The squeeze is the mean over the whole window, or with ``causal=True``
    the running mean up to each step, which gives one gate vector per step
    and keeps the block causal. The bottleneck width is ``ceil(channels / reduction)``.
    """

    def __init__(self, channels: int, reduction: int = 4, name: str = "se", causal: bool = False):
        super().__init__(name)
        hidden = max(1, math.ceil(channels / reduction))
        self.channels = channels
        self.causal = causal
        self.fc1 = Linear(channels, hidden, "fc1")
        self.relu = ReLU()
        self.fc2 = Linear(hidden, channels, "fc2")
        self.gate = Sigmoid()
        self.children = [self.fc1, self.fc2]
        self._cache = None

    def _excite(self, s):
        return self.gate.forward(self.fc2.forward(self.relu.forward(self.fc1.forward(s))))

    def gates(self, x):
        """``(B, C)`` gates, or ``(B, C, T)`` when causal."""
        if not self.causal:
            return self._excite(x.mean(axis=2))
        B, C, T = x.shape
        n = np.arange(1, T + 1, dtype=x.dtype)
        s = np.cumsum(x, axis=2) / n
        g = self._excite(s.transpose(0, 2, 1).reshape(B * T, C))
        return g.reshape(B, T, C).transpose(0, 2, 1)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected (B, {self.channels}, T), got {x.shape}")
        g = self.gates(x)
        self._cache = (x, g)
        return x * (g if self.causal else g[:, :, None])

    def _squeeze_grad(self, dg):
        return self.fc1.backward(self.relu.backward(self.fc2.backward(self.gate.backward(dg))))

    def backward(self, grad):
        x, g = self._cache
        B, C, T = x.shape
        if not self.causal:
            ds = self._squeeze_grad(np.sum(grad * x, axis=2))
            return grad * g[:, :, None] + ds[:, :, None] / T
        dg = (grad * x).transpose(0, 2, 1).reshape(B * T, C)
        ds = self._squeeze_grad(dg).reshape(B, T, C).transpose(0, 2, 1)
        ds = ds / np.arange(1, T + 1, dtype=x.dtype)
        # d s_t / d x_tau = 1/t for tau <= t: reverse cumulative sum
        return grad * g + np.flip(np.cumsum(np.flip(ds, axis=2), axis=2), axis=2)


class ResidualBlock(Module):
    """``out = body(x) + skip(x)``, optionally followed by ReLU.

    ``skip`` is identity when ``None`` (requires matching shapes) or a layer
    such as a 1x1 convolution.
    """

    def __init__(self, body: Sequence[Module], skip: Module | None = None, post_relu: bool = False, name: str = "block"):
        super().__init__(name)
        self.body = Sequential(body, "body")
        self.skip = skip
        self.post = ReLU() if post_relu else None
        self.children = [self.body] + ([skip] if skip is not None else [])

    def forward(self, x):
        main = self.body.forward(x)
        res = x if self.skip is None else self.skip.forward(x)
        if main.shape != res.shape:
            raise ShapeError(f"{self.name}: body output {main.shape} != skip output {res.shape}")
        out = main + res
        return self.post.forward(out) if self.post else out

    def backward(self, grad):
        if self.post:
            grad = self.post.backward(grad)
        dx = self.body.backward(grad)
        dx = dx + (grad if self.skip is None else self.skip.backward(grad))
        return dx


class Fusion(Module):
    """Run each branch on its own input, concatenate features, apply the head."""

    def __init__(self, branches: Sequence[Module], head: Module, name: str = ""):
        super().__init__(name)
        self.branches = list(branches)
        self.head = head
        self.children = self.branches + [head]
        self._widths = None

    def forward(self, *xs):
        if len(xs) != len(self.branches):
            raise ShapeError(f"fusion expects {len(self.branches)} inputs, got {len(xs)}")
        feats = [b.forward(x) for b, x in zip(self.branches, xs)]
        self._widths = [f.shape[1] for f in feats]
        return self.head.forward(np.concatenate(feats, axis=1) if len(feats) > 1 else feats[0])

    def backward(self, grad):
        g = self.head.backward(grad)
        out, start = [], 0
        for branch, w in zip(self.branches, self._widths):
            out.append(branch.backward(g[:, start : start + w]))
            start += w
        return tuple(out)


def tcn_receptive_field(kernel: int, dilations: Sequence[int]) -> int:
    """Receptive field of a TCN with two causal convs per block."""
    return 1 + sum(2 * (kernel - 1) * d for d in dilations)
