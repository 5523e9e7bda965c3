"""Parameter tensors and the layer base class.

Layers cache what they need during ``forward`` and implement ``backward``,
which takes the gradient w.r.t. the layer output, accumulates parameter
gradients, and returns the gradient w.r.t. the input. Chaining ``backward``
calls in reverse order is reverse-mode differentiation over the layer graph.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import GradientError


class Tensor:
    """Named trainable array with an accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor({self.name!r}, shape={self.shape})"


class Module:
    """Base layer. Subclasses set ``self.params`` / ``self.children`` in ``__init__``."""

    name: str = ""

    def __init__(self, name: str = ""):
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.children: list[Module] = []

    # graph traversal --------------------------------------------------
    def parameters(self, prefix: str = "") -> Iterator[Tensor]:
        """All parameters in declaration order, each exactly once."""
        path = f"{prefix}{self.name}." if self.name else prefix
        for key, t in self.params.items():
            t.name = f"{path}{key}"
            yield t
        for child in self.children:
            yield from child.parameters(path)

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self.children:
            yield from child.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)
        return self

    @property
    def dtype(self):
        for p in self.parameters():
            return p.value.dtype
        return np.float64

    def init(self, rng: np.random.Generator) -> "Module":
        """Initialise weights (uniform, +-1/sqrt(fan_in)) and biases in declaration order."""
        for m in self.modules():
            m._init_own(rng)
        return self

    def _init_own(self, rng: np.random.Generator) -> None:
        pass

    def zero_(self) -> "Module":
        for p in self.parameters():
            p.value[...] = 0.0
        return self

    def n_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    # computation ------------------------------------------------------
    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def check_grads(self) -> None:
        for p in self.parameters():
            if not np.all(np.isfinite(p.grad)):
                raise GradientError(f"non-finite gradient in layer {p.name}")
