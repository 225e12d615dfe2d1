"""Layer descriptors and the compact notation used to write layer stacks.

``"32*relu + 32*relu"`` describes two layers of width 32 with ReLU output;
``"BN + 256*relu + dropout(0.2) + reshape(32,2)"`` mixes other kinds. Whether
``W*act`` means a BLSTM or a dense layer depends on the stack being parsed.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .blstm import BLSTM
from .layers import ACTIVATIONS, BatchNorm, Dense, Dropout, Flatten, Layer, Reshape

KINDS = ("blstm", "dense", "batch_norm", "dropout", "reshape", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int = 0
    activation: str = "linear"
    dropout_rate: float = 0.0
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("blstm", "dense") and self.width < 1:
            raise ValueError(f"{self.kind} layer needs width >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def to_text(self) -> str:
        if self.kind in ("blstm", "dense"):
            return f"{self.width}*{self.activation}"
        if self.kind == "batch_norm":
            return "BN"
        if self.kind == "dropout":
            return f"dropout({self.dropout_rate!r})"
        if self.kind == "reshape":
            return f"reshape({','.join(map(str, self.shape))})"
        return "flatten"


_UNIT = re.compile(r"^(\d+)\s*\*\s*([a-zA-Z]+)$")
_CALL = re.compile(r"^([a-zA-Z_]+)\s*\(([^)]*)\)$")


def parse_layers(text: str, unit_kind: str = "dense") -> list[LayerSpec]:
    """Parse ``"a + b + ..."`` notation into layer specs."""
    if not text.strip() or text.strip() == "-":
        return []
    out = []
    for tok in (t.strip() for t in text.split("+")):
        m = _UNIT.match(tok)
        if m:
            out.append(LayerSpec(unit_kind, int(m.group(1)), m.group(2).lower()))
            continue
        low = tok.lower()
        if low in ("bn", "batchnorm", "batch_norm"):
            out.append(LayerSpec("batch_norm"))
            continue
        if low == "flatten":
            out.append(LayerSpec("flatten"))
            continue
        m = _CALL.match(low)
        if m and m.group(1) == "dropout":
            out.append(LayerSpec("dropout", dropout_rate=float(m.group(2))))
            continue
        if m and m.group(1) == "reshape":
            out.append(LayerSpec("reshape", shape=tuple(int(s) for s in m.group(2).split(","))))
            continue
        raise ValueError(f"cannot parse layer {tok!r}")
    return out


def layers_to_text(specs: list[LayerSpec]) -> str:
    return " + ".join(s.to_text() for s in specs) if specs else "-"


def build_layer(spec: LayerSpec, in_shape: tuple[int, ...], rng: np.random.Generator,
                dtype=np.float32) -> Layer:
    """Instantiate one layer for an input of per-example shape ``in_shape``."""
    if spec.kind == "blstm":
        if len(in_shape) != 2:
            raise ValueError(f"blstm needs (steps, features) input, got {in_shape}")
        return BLSTM(in_shape[1], spec.width, spec.activation, rng=rng, dtype=dtype)
    if spec.kind == "dense":
        if len(in_shape) != 1:
            raise ValueError(f"dense needs a flat input, got {in_shape}; add flatten first")
        return Dense(in_shape[0], spec.width, spec.activation, rng=rng, dtype=dtype)
    if spec.kind == "batch_norm":
        if len(in_shape) != 1:
            raise ValueError(f"batch_norm needs a flat input, got {in_shape}")
        return BatchNorm(in_shape[0], dtype=dtype)
    if spec.kind == "dropout":
        return Dropout(spec.dropout_rate, rng=np.random.default_rng(rng.integers(2**63)))
    if spec.kind == "reshape":
        return Reshape(spec.shape)
    return Flatten()


def build_stack(specs: list[LayerSpec], in_shape: tuple[int, ...], rng: np.random.Generator,
                dtype=np.float32) -> tuple[list[Layer], tuple[int, ...]]:
    layers = []
    for spec in specs:
        layer = build_layer(spec, in_shape, rng, dtype)
        in_shape = layer.output_shape(in_shape)
        layers.append(layer)
    return layers, in_shape
