"""Weights file: little-endian binary.

Header: magic ``EXNW``, u32 version, 32-byte sha256 of the graph spec, u32
parameter count. Each parameter: u16 name length, utf-8 name, u8 ndim, u32
dims, float64 values, in declaration order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ShapeError, WeightsFormatError
from .core import Module

MAGIC = b"EXNW"
VERSION = 1


def spec_hash(spec) -> bytes:
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).digest()


def save_weights(model: Module, path, spec=None) -> None:
    params = list(model.parameters())
    parts = [MAGIC, struct.pack("<I", VERSION), spec_hash(spec), struct.pack("<I", len(params))]
    for p in params:
        name = p.name.encode()
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<B", p.value.ndim) + struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        parts.append(np.asarray(p.value, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightsFormatError(f"weights file truncated at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(model: Module, path, spec=None) -> Module:
    """Load parameters into ``model`` (keeping its dtype).

    Raises :class:`WeightsFormatError` for a bad header, version, spec hash
    (when ``spec`` is given), or truncation, and :class:`ShapeError` naming
    the first layer whose stored shape differs from the model.
    """
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise WeightsFormatError("not a weights file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weights version {version}, expected {VERSION}")
    digest = r.take(32)
    if spec is not None and digest != spec_hash(spec):
        raise WeightsFormatError("weights were saved for a different graph spec")
    (count,) = r.unpack("<I")
    params = list(model.parameters())
    values = []
    for i in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        data = np.frombuffer(r.take(8 * int(np.prod(shape))), dtype="<f8").reshape(shape)
        if i >= len(params):
            raise ShapeError(f"stored layer {name} has no counterpart in the model")
        if params[i].name != name or params[i].shape != tuple(shape):
            raise ShapeError(
                f"layer {params[i].name}: model expects shape {params[i].shape}, "
                f"file has {name} with shape {tuple(shape)}"
            )
        values.append(data)
    if count != len(params):
        raise ShapeError(f"model has {len(params)} parameters, file has {count}; first missing: {params[count].name}")
    if r.pos != len(r.buf):
        raise WeightsFormatError("trailing bytes after parameters")
    for p, v in zip(params, values):
        p.value = v.astype(p.value.dtype)
        p.grad = np.zeros_like(p.value)
    return model
