"""Workload definitions: GEMM / Conv2D / MaxPool layers and layer chains.

Convolutions are executed as GEMMs through implicit im2col (addresses are
generated on the fly; the im2col matrix is never materialized).  Channels are
zero-padded to a multiple of 8 to match the C/8HWC8 word layout; padded
channels hold zeros and contribute nothing.

Workload files are YAML: a `name` plus a `layers` list.  Every layer carries
explicit integer dimensions, quantization parameters, and operand-source
links (`offchip` tensor names or `{layer: <name>}` references to an earlier
layer's output).  The parser rejects unknown keys.
"""

from __future__ import annotations

import math
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import yaml

from .postproc import QuantParams


class WorkloadError(ValueError):
    pass


def ceil8(x: int) -> int:
    return -(-x // 8) * 8


@dataclass(frozen=True)
class GemmShape:
    m: int
    k: int
    n: int

    def __post_init__(self):
        if min(self.m, self.k, self.n) < 1:
            raise WorkloadError(f"GEMM dims must be positive, got {self}")

    @property
    def macs(self) -> int:
        return self.m * self.k * self.n


@dataclass(frozen=True)
class Conv2dShape:
    h: int
    w: int
    c: int
    oc: int
    fy: int
    fx: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if min(self.h, self.w, self.c, self.oc, self.fy, self.fx, self.stride) < 1:
            raise WorkloadError(f"conv dims must be positive, got {self}")
        if self.pad < 0:
            raise WorkloadError("pad must be non-negative")
        for name, size, f in (("height", self.h, self.fy), ("width", self.w, self.fx)):
            span = size + 2 * self.pad - f
            if span < 0 or span % self.stride:
                raise WorkloadError(
                    f"conv output {name} is not a positive integer for {self}")

    @property
    def oh(self) -> int:
        return (self.h + 2 * self.pad - self.fy) // self.stride + 1

    @property
    def ow(self) -> int:
        return (self.w + 2 * self.pad - self.fx) // self.stride + 1

    @property
    def c8(self) -> int:
        return ceil8(self.c)


@dataclass(frozen=True)
class MaxPoolShape:
    h: int
    w: int
    c: int
    window: int
    stride: int

    def __post_init__(self):
        if min(self.h, self.w, self.c, self.window, self.stride) < 1:
            raise WorkloadError(f"maxpool dims must be positive, got {self}")
        if (self.h - self.window) % self.stride or (self.w - self.window) % self.stride:
            raise WorkloadError(f"pool window does not tile the fmap: {self}")

    @property
    def oh(self) -> int:
        return (self.h - self.window) // self.stride + 1

    @property
    def ow(self) -> int:
        return (self.w - self.window) // self.stride + 1


def lower_conv_to_gemm(c: Conv2dShape) -> GemmShape:
    """Implicit-im2col lowering: m = oh*ow, k = fy*fx*c, n = oc."""
    return GemmShape(m=c.oh * c.ow, k=c.fy * c.fx * c.c, n=c.oc)


@dataclass(frozen=True)
class OperandRef:
    """Where an operand comes from: an off-chip tensor or an earlier layer."""

    kind: str  # "offchip" | "layer"
    name: str = ""      # off-chip tensor name (shared names alias storage)
    layer: int = -1     # producer layer index when kind == "layer"
    transpose: bool = False  # weight operands: read the producer transposed

    @staticmethod
    def offchip(name: str) -> "OperandRef":
        return OperandRef(kind="offchip", name=name)

    @staticmethod
    def from_layer(idx: int, transpose: bool = False) -> "OperandRef":
        return OperandRef(kind="layer", layer=idx, transpose=transpose)


@dataclass(frozen=True)
class LayerOp:
    name: str
    op: Union[GemmShape, Conv2dShape, MaxPoolShape]
    input: OperandRef
    weight: Optional[OperandRef] = None
    quant: Optional[QuantParams] = None

    @property
    def kind(self) -> str:
        if isinstance(self.op, GemmShape):
            return "gemm"
        if isinstance(self.op, Conv2dShape):
            return "conv2d"
        return "maxpool"

    def gemm_view(self) -> Optional[GemmShape]:
        """The GEMM this layer maps to (None for maxpool).

        Conv channels count the padded c8 value: that is what streams through
        the datapath; the logical k is fy*fx*c.
        """
        if isinstance(self.op, GemmShape):
            return self.op
        if isinstance(self.op, Conv2dShape):
            c = self.op
            return GemmShape(m=c.oh * c.ow, k=c.fy * c.fx * c.c8, n=c.oc)
        return None

    def out_matrix_dims(self):
        """Output viewed as a (rows, cols) int8 matrix."""
        if isinstance(self.op, GemmShape):
            return self.op.m, self.op.n
        if isinstance(self.op, Conv2dShape):
            return self.op.oh * self.op.ow, self.op.oc
        return self.op.oh * self.op.ow, self.op.c


@dataclass
class Network:
    name: str
    layers: list = field(default_factory=list)

    def validate(self) -> None:
        if not self.layers:
            raise WorkloadError(f"network {self.name!r} has no layers")
        for i, layer in enumerate(self.layers):
            for ref, what in ((layer.input, "input"), (layer.weight, "weight")):
                if ref is None:
                    continue
                if ref.kind == "layer":
                    if not 0 <= ref.layer < i:
                        raise WorkloadError(
                            f"layer {layer.name!r} {what} references layer "
                            f"{ref.layer}, which is not earlier in the sequence")
                    self._check_chain(i, ref, what)
                elif ref.kind != "offchip":
                    raise WorkloadError(f"unknown operand kind {ref.kind!r}")
            if layer.kind in ("gemm", "conv2d"):
                if layer.weight is None or layer.quant is None:
                    raise WorkloadError(
                        f"layer {layer.name!r} needs weight and quant parameters")

    def _check_chain(self, i: int, ref: OperandRef, what: str) -> None:
        layer = self.layers[i]
        prod_rows, prod_cols = self.layers[ref.layer].out_matrix_dims()
        if what == "input":
            if layer.kind == "maxpool":
                need = (layer.op.h * layer.op.w, layer.op.c)
            elif layer.kind == "conv2d":
                need = (layer.op.h * layer.op.w, layer.op.c)
            else:
                need = (layer.op.m, layer.op.k)
            if need != (prod_rows, prod_cols):
                raise WorkloadError(
                    f"layer {layer.name!r} input {need} != producer output "
                    f"({prod_rows}, {prod_cols})")
        else:
            g = layer.gemm_view()
            need = (g.n, g.k) if ref.transpose else (g.k, g.n)
            if need != (prod_rows, prod_cols):
                raise WorkloadError(
                    f"layer {layer.name!r} weight {need} != producer output "
                    f"({prod_rows}, {prod_cols})")

    def total_macs(self) -> int:
        total = 0
        for layer in self.layers:
            if isinstance(layer.op, GemmShape):
                total += layer.op.macs
            elif isinstance(layer.op, Conv2dShape):
                total += lower_conv_to_gemm(layer.op).macs
        return total


def _mha_quant(k: int) -> QuantParams:
    # scale so int8-uniform inputs produce well-spread int8 outputs
    shift = max(0, round(math.log2(max(1.0, math.sqrt(k) * 5461 / 40))))
    return QuantParams(multiplier=1, shift=min(31, shift))


def mha_sequence(tokens: int, d_model: int, d_head: int,
                 name: str = "mha", prefix: str = "") -> Network:
    """One attention head as a chain of six GEMMs.

    Q = X Wq, K = X Wk, V = X Wv, S = Q K^T, O = softmax(S) V, P = O Wo.
    The K^T read is flagged for the weight streamer's transposer; softmax is a
    zero-cost host boundary between S and O.
    """
    if min(tokens, d_model, d_head) < 1:
        raise WorkloadError("mha dims must be positive")
    p = prefix
    x = OperandRef.offchip(p + "X")
    layers = [
        LayerOp(p + "q_proj", GemmShape(tokens, d_model, d_head), x,
                OperandRef.offchip(p + "Wq"), _mha_quant(d_model)),
        LayerOp(p + "k_proj", GemmShape(tokens, d_model, d_head), x,
                OperandRef.offchip(p + "Wk"), _mha_quant(d_model)),
        LayerOp(p + "v_proj", GemmShape(tokens, d_model, d_head), x,
                OperandRef.offchip(p + "Wv"), _mha_quant(d_model)),
    ]
    base = 0
    layers.append(LayerOp(p + "scores", GemmShape(tokens, d_head, tokens),
                          OperandRef.from_layer(base + 0),
                          OperandRef.from_layer(base + 1, transpose=True),
                          _mha_quant(d_head)))
    layers.append(LayerOp(p + "attn_out", GemmShape(tokens, tokens, d_head),
                          OperandRef.from_layer(base + 3),
                          OperandRef.from_layer(base + 2),
                          _mha_quant(tokens)))
    layers.append(LayerOp(p + "out_proj", GemmShape(tokens, d_head, d_model),
                          OperandRef.from_layer(base + 4),
                          OperandRef.offchip(p + "Wo"), _mha_quant(d_head)))
    net = Network(name, layers)
    net.validate()
    return net


# ---------------------------------------------------------------------------
# YAML parsing

_LAYER_KEYS = {
    "name", "op", "m", "k", "n", "h", "w", "c", "oc", "fy", "fx", "stride",
    "pad", "window", "input", "weight", "quant",
}
_QUANT_KEYS = {"multiplier", "shift", "zero_point", "relu"}


def _parse_ref(value, layer_names: dict, what: str) -> OperandRef:
    if isinstance(value, str):
        return OperandRef.offchip(value)
    if isinstance(value, dict):
        unknown = set(value) - {"layer", "transpose"}
        if unknown:
            raise WorkloadError(f"unknown {what} keys: {sorted(unknown)}")
        target = value["layer"]
        if target not in layer_names:
            raise WorkloadError(f"{what} references unknown layer {target!r}")
        return OperandRef.from_layer(layer_names[target],
                                     transpose=bool(value.get("transpose", False)))
    raise WorkloadError(f"bad {what} operand spec: {value!r}")


def network_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise WorkloadError("workload file must be a mapping")
    unknown = set(doc) - {"name", "layers"}
    if unknown:
        raise WorkloadError(f"unknown workload keys: {sorted(unknown)}")
    name = doc.get("name")
    if not name:
        raise WorkloadError("workload needs a name")
    layers = []
    layer_names = {}
    for i, ld in enumerate(doc.get("layers") or []):
        unknown = set(ld) - _LAYER_KEYS
        if unknown:
            raise WorkloadError(f"unknown layer keys: {sorted(unknown)}")
        lname = ld.get("name", f"layer{i}")
        op_kind = ld.get("op", "gemm")
        if op_kind == "gemm":
            op = GemmShape(ld["m"], ld["k"], ld["n"])
        elif op_kind == "conv2d":
            op = Conv2dShape(ld["h"], ld["w"], ld["c"], ld["oc"], ld["fy"],
                             ld["fx"], ld.get("stride", 1), ld.get("pad", 0))
        elif op_kind == "maxpool":
            op = MaxPoolShape(ld["h"], ld["w"], ld["c"], ld["window"], ld["stride"])
        else:
            raise WorkloadError(f"unknown op {op_kind!r} in layer {lname!r}")
        inp = _parse_ref(ld.get("input", f"{lname}_in"), layer_names, "input")
        weight = None
        quant = None
        if op_kind != "maxpool":
            weight = _parse_ref(ld.get("weight", f"{lname}_w"), layer_names, "weight")
            qd = ld.get("quant", {})
            unknown = set(qd) - _QUANT_KEYS
            if unknown:
                raise WorkloadError(f"unknown quant keys: {sorted(unknown)}")
            quant = QuantParams(qd.get("multiplier", 1), qd.get("shift", 0),
                                qd.get("zero_point", 0), bool(qd.get("relu", False)))
        layers.append(LayerOp(lname, op, inp, weight, quant))
        layer_names[lname] = i
    net = Network(name, layers)
    net.validate()
    return net


def load_workload(path) -> Network:
    with open(path) as f:
        doc = yaml.safe_load(f)
    try:
        return network_from_dict(doc)
    except KeyError as e:
        raise WorkloadError(f"{path}: missing key {e}") from e


BUILTIN_NAMES = (
    "mobilenetv2", "resnet50", "vit-b", "pointnext",
    "lstm", "bert-base", "llama-prefill", "llama-decode",
)


def workload_dir() -> Path:
    override = os.environ.get("VOLTRASIM_WORKLOAD_DIR")
    if override:
        return Path(override)
    return Path(__file__).parent / "workloads"


def builtin_workloads() -> list:
    """The eight desk-scale benchmark networks, loaded from checked-in files."""
    nets = []
    for name in BUILTIN_NAMES:
        path = workload_dir() / (name.replace("-", "_") + ".yaml")
        if not path.exists():
            raise WorkloadError(f"missing builtin workload file {path}")
        net = load_workload(path)
        net.validate()
        nets.append(net)
    return nets


def builtin_workload(name: str) -> Network:
    for net in builtin_workloads():
        if net.name == name:
            return net
    raise WorkloadError(f"unknown builtin workload {name!r}")


# ---------------------------------------------------------------------------
# Synthetic tensor data (seeded pseudo-random int8)

def tensor_data(name: str, shape, seed: int) -> np.ndarray:
    """Deterministic int8 tensor for an off-chip tensor name."""
    rng = np.random.default_rng([seed & 0x7FFFFFFF, zlib.crc32(name.encode())])
    return rng.integers(-128, 128, size=shape, dtype=np.int8)
