"""Build layer graphs from JSON-compatible specs.

A layer spec is a dict with an ``op`` key:

``conv1d{c_in, c_out, k, dilation=1, stride=1, causal=true}``, ``fc{in, out}``,
``relu``, ``sigmoid``, ``softmax``, ``gap``, ``readout{mode, segments}``, ``pool{size}``,
``se{channels, reduction, causal=false}``, ``residual{body, skip=None, post_relu=false}``.

Encoder specs (``tcn`` and ``se_resnet`` types) expand to layer lists. A
model spec names its inputs, one encoder per input, and an FC head; it
builds into a :class:`Fusion` of the encoders.
"""

from __future__ import annotations

import copy
from typing import Any

from ..errors import ContractError, ShapeError
from .core import Module
from .layers import (
    AvgPool1d, Conv1d, Fusion, Linear, Readout, ReLU, ResidualBlock, SEBlock, Sequential, Sigmoid, Softmax,
    tcn_receptive_field,
)


def build_layer(spec: dict, name: str) -> Module:
    op = spec.get("op")
    if op == "conv1d":
        if not spec.get("causal", True):
            raise ContractError("only causal convolutions are supported")
        return Conv1d(spec["c_in"], spec["c_out"], spec["k"], spec.get("dilation", 1), spec.get("stride", 1), name)
    if op == "fc":
        return Linear(spec["in"], spec["out"], name)
    if op == "relu":
        return ReLU(name)
    if op == "sigmoid":
        return Sigmoid(name)
    if op == "softmax":
        return Softmax(name)
    if op == "pool":
        return AvgPool1d(spec["size"], name)
    if op == "gap":
        return Readout("gap", name=name)
    if op == "readout":
        return Readout(spec["mode"], spec.get("segments"), name)
    if op == "se":
        return SEBlock(spec["channels"], spec.get("reduction", 4), name, spec.get("causal", False))
    if op == "residual":
        skip = spec.get("skip")
        return ResidualBlock(
            [build_layer(s, f"{s['op']}{i}") for i, s in enumerate(spec["body"])],
            None if skip is None else build_layer(skip, "skip"),
            spec.get("post_relu", False),
            name,
        )
    raise ContractError(f"unknown layer op {op!r}")


def build_sequential(layers: list[dict], name: str = "") -> Sequential:
    return Sequential([build_layer(s, f"{s['op']}{i}") for i, s in enumerate(layers)], name)


def _readout(enc: dict) -> dict:
    mode = enc.get("readout", "gap")
    return {"op": "readout", "mode": mode, "segments": enc.get("segments")}


def tcn_layers(enc: dict) -> list[dict]:
    """Residual blocks of two causal convs + ReLU; 1x1 conv skip when widths differ."""
    c, k = enc["channels"], enc["kernel"]
    layers, c_in = [], enc["c_in"]
    for d in enc["dilations"]:
        body = [
            {"op": "conv1d", "c_in": c_in, "c_out": c, "k": k, "dilation": d},
            {"op": "relu"},
            {"op": "conv1d", "c_in": c, "c_out": c, "k": k, "dilation": d},
            {"op": "relu"},
        ]
        skip = None if c_in == c else {"op": "conv1d", "c_in": c_in, "c_out": c, "k": 1}
        layers.append({"op": "residual", "body": body, "skip": skip})
        c_in = c
    return layers + [_readout(enc)]


def se_resnet_layers(enc: dict) -> list[dict]:
    """Strided stem conv, then residual blocks (conv-relu-conv[-SE]) + skip, ReLU after the add.

    SE blocks squeeze with a running mean (``causal_se``, default true) so the
    encoder stays causal end to end.
    """
    c, k = enc["channels"], enc.get("kernel", 3)
    layers = [
        {"op": "conv1d", "c_in": enc["c_in"], "c_out": c, "k": enc["stem_kernel"], "stride": enc.get("stem_stride", 1)},
        {"op": "relu"},
    ]
    for _ in range(enc["blocks"]):
        body = [
            {"op": "conv1d", "c_in": c, "c_out": c, "k": k},
            {"op": "relu"},
            {"op": "conv1d", "c_in": c, "c_out": c, "k": k},
        ]
        if enc.get("se", True):
            body.append({"op": "se", "channels": c, "reduction": enc.get("reduction", 4), "causal": enc.get("causal_se", True)})
        layers.append({"op": "residual", "body": body, "post_relu": True})
    return layers + [_readout(enc)]


def encoder_layers(enc: dict) -> list[dict]:
    """Layer list for an encoder; ``pool: p`` prepends p-fold causal average pooling."""
    kind = enc.get("type")
    if kind == "tcn":
        layers = tcn_layers(enc)
    elif kind == "se_resnet":
        layers = se_resnet_layers(enc)
    elif kind == "layers":
        layers = copy.deepcopy(enc["layers"])
    else:
        raise ContractError(f"unknown encoder type {kind!r}")
    pool = enc.get("pool", 1)
    return ([{"op": "pool", "size": pool}] if pool > 1 else []) + layers


def encoder_features(enc: dict) -> int:
    last = encoder_layers(enc)[-1]
    if last["op"] not in ("readout", "gap"):
        raise ShapeError("encoder must end in a readout")
    width = enc["channels"] if "channels" in enc else enc["out_channels"]
    return Readout(last.get("mode", "gap"), last.get("segments")).out_features(width)


def receptive_field(enc: dict) -> int:
    """Receptive field in input samples."""
    p = enc.get("pool", 1)
    if enc.get("type") == "tcn":
        return p * tcn_receptive_field(enc["kernel"], enc["dilations"])
    if enc.get("type") == "se_resnet":
        s = enc.get("stem_stride", 1)
        k = enc.get("kernel", 3)
        return p * (enc["stem_kernel"] + s * 2 * (k - 1) * enc["blocks"])
    raise ContractError("receptive field is defined for tcn and se_resnet encoders")


def build_model(spec: dict[str, Any]) -> Fusion:
    """Fusion model: ``spec = {inputs: [...], encoders: {input: enc}, head: {hidden, out}}``."""
    inputs = list(spec["inputs"])
    if not inputs:
        raise ContractError("model needs at least one input")
    branches, width = [], 0
    for key in inputs:
        enc = spec["encoders"][key]
        branches.append(build_sequential(encoder_layers(enc), key))
        width += encoder_features(enc)
    head = spec["head"]
    hidden = head.get("hidden", 0)
    if hidden:
        layers = [{"op": "fc", "in": width, "out": hidden}, {"op": "relu"}, {"op": "fc", "in": hidden, "out": head["out"]}]
    else:
        layers = [{"op": "fc", "in": width, "out": head["out"]}]
    return Fusion(branches, build_sequential(layers, "head"))
