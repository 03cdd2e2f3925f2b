"""Network structure: layer specs, weight/mask stores, forward evaluation.

A network is an ordered list of LayerSpec plus two index-keyed stores:
weights (float32 parameter arrays per layer) and masks (binary float32
arrays, present only for prunable layers' weight tensors; biases and
non-prunable layers are implicitly dense). Masked weights participate in
the forward pass as mask * weight, so a masked-out weight has no effect on
the output regardless of its stored value.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ArchitectureError, DimensionError
from .rng import SeededRng

LINEAR = "linear"
RELU = "relu"
CONV = "conv"
BASIC_BLOCK = "residual_basic_block"
FLATTEN = "flatten"
OUTPUT_LINEAR = "output_linear"

KINDS = (LINEAR, RELU, CONV, BASIC_BLOCK, FLATTEN, OUTPUT_LINEAR)


@dataclass
class LayerSpec:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    in_ch: int = 0
    out_ch: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    prunable: bool = False
    grown_at_iteration: Optional[int] = None

    _DEFAULTS = {"in_dim": 0, "out_dim": 0, "in_ch": 0, "out_ch": 0,
                 "kernel_size": 0, "stride": 1, "padding": 0,
                 "prunable": False, "grown_at_iteration": None}

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for name, default in self._DEFAULTS.items():
            v = getattr(self, name)
            if v != default:
                d[name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def linear(in_dim: int, out_dim: int, prunable: bool = False) -> LayerSpec:
    return LayerSpec(LINEAR, in_dim=in_dim, out_dim=out_dim, prunable=prunable)


def output_linear(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec(OUTPUT_LINEAR, in_dim=in_dim, out_dim=out_dim)


def relu_layer() -> LayerSpec:
    return LayerSpec(RELU)


def conv(in_ch: int, out_ch: int, kernel_size: int, stride: int = 1,
         padding: Optional[int] = None, prunable: bool = False) -> LayerSpec:
    if padding is None:
        padding = kernel_size // 2
    return LayerSpec(CONV, in_ch=in_ch, out_ch=out_ch,
                     kernel_size=kernel_size, stride=stride, padding=padding,
                     prunable=prunable)


def basic_block(channels: int, kernel_size: int = 3,
                prunable: bool = False) -> LayerSpec:
    # skip connection adds the unprojected input, so in == out and the
    # convs must preserve the spatial extent
    return LayerSpec(BASIC_BLOCK, in_ch=channels, out_ch=channels,
                     kernel_size=kernel_size, stride=1,
                     padding=kernel_size // 2, prunable=prunable)


def flatten_layer() -> LayerSpec:
    return LayerSpec(FLATTEN)


@dataclass
class Architecture:
    input_shape: tuple
    class_count: int
    layers: list[LayerSpec] = field(default_factory=list)

    def validate(self):
        shape = propagate_shapes(self)[-1]
        last = self.layers[-1] if self.layers else None
        if last is None or last.kind != OUTPUT_LINEAR:
            raise ArchitectureError("last layer must be an output_linear")
        if shape != (self.class_count,):
            raise ArchitectureError(
                f"network emits {shape}, expected ({self.class_count},) logits")

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "class_count": self.class_count,
                "layers": [s.to_dict() for s in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(input_shape=tuple(d["input_shape"]),
                   class_count=int(d["class_count"]),
                   layers=[LayerSpec.from_dict(s) for s in d["layers"]])

    def clone(self) -> "Architecture":
        return Architecture(self.input_shape, self.class_count,
                            [replace(s) for s in self.layers])


def _layer_output_shape(spec: LayerSpec, shape: tuple) -> tuple:
    if spec.kind in (LINEAR, OUTPUT_LINEAR):
        if shape != (spec.in_dim,):
            raise ArchitectureError(
                f"{spec.kind} expects ({spec.in_dim},), got {shape}")
        return (spec.out_dim,)
    if spec.kind == RELU:
        return shape
    if spec.kind == FLATTEN:
        if len(shape) < 2:
            raise ArchitectureError(f"flatten on shape {shape}")
        return (int(np.prod(shape)),)
    if spec.kind in (CONV, BASIC_BLOCK):
        if len(shape) != 3 or shape[0] != spec.in_ch:
            raise ArchitectureError(
                f"{spec.kind} expects ({spec.in_ch},H,W), got {shape}")
        c, h, w = shape
        k, s, p = spec.kernel_size, spec.stride, spec.padding
        if (h + 2 * p - k) % s or (w + 2 * p - k) % s:
            raise ArchitectureError(
                f"{spec.kind} output extent not integral for {shape}")
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if spec.kind == BASIC_BLOCK:
            if spec.in_ch != spec.out_ch:
                raise ArchitectureError("basic block needs in_ch == out_ch")
            if (oh, ow) != (h, w):
                raise ArchitectureError(
                    "basic block convs must preserve the spatial extent")
        return (spec.out_ch, oh, ow)
    raise ArchitectureError(f"unknown layer kind {spec.kind!r}")


def propagate_shapes(arch: Architecture) -> list[tuple]:
    """Per-layer output shapes (index 0 is the input shape)."""
    shapes = [tuple(arch.input_shape)]
    for spec in arch.layers:
        shapes.append(_layer_output_shape(spec, shapes[-1]))
    return shapes


# ---------------------------------------------------------------------------
# parameters

def param_shapes(spec: LayerSpec) -> dict[str, tuple]:
    if spec.kind in (LINEAR, OUTPUT_LINEAR):
        return {"weight": (spec.in_dim, spec.out_dim),
                "bias": (spec.out_dim,)}
    if spec.kind == CONV:
        return {"weight": (spec.out_ch, spec.in_ch, spec.kernel_size,
                           spec.kernel_size),
                "bias": (spec.out_ch,)}
    if spec.kind == BASIC_BLOCK:
        k = spec.kernel_size
        c = spec.in_ch
        return {"conv1_weight": (c, c, k, k), "conv1_bias": (c,),
                "conv2_weight": (c, c, k, k), "conv2_bias": (c,)}
    return {}


def weight_names(spec: LayerSpec) -> list[str]:
    return [n for n in param_shapes(spec) if not n.endswith("bias")]


def _fan_in(spec: LayerSpec) -> int:
    if spec.kind in (LINEAR, OUTPUT_LINEAR):
        return spec.in_dim
    return spec.in_ch * spec.kernel_size * spec.kernel_size


def init_layer_params(spec: LayerSpec, rng: SeededRng) -> dict[str, np.ndarray]:
    """Uniform[-sqrt(1/fan_in), +sqrt(1/fan_in)] weights, zero biases."""
    bound = float(np.sqrt(1.0 / _fan_in(spec))) if param_shapes(spec) else 0.0
    params = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            params[name] = rng.uniform(-bound, bound, shape)
    return params


def build_network(arch: Architecture, rng: SeededRng):
    """Fresh (weights, masks): random weights, all-ones masks on prunable layers."""
    arch.validate()
    weights: dict[int, dict[str, np.ndarray]] = {}
    masks: dict[int, dict[str, np.ndarray]] = {}
    for idx, spec in enumerate(arch.layers):
        shapes = param_shapes(spec)
        if not shapes:
            continue
        weights[idx] = init_layer_params(spec, rng)
        if spec.prunable:
            masks[idx] = {n: np.ones(shapes[n], dtype=np.float32)
                          for n in weight_names(spec)}
    return weights, masks


def total_param_count(weights: dict) -> int:
    return sum(p.size for layer in weights.values() for p in layer.values())


def dense_param_count(arch: Architecture) -> int:
    return sum(int(np.prod(shape))
               for spec in arch.layers
               for shape in param_shapes(spec).values())


# ---------------------------------------------------------------------------
# forward

def make_param_tensors(weights: dict, requires_grad: bool = True) -> dict:
    """Tensor wrappers sharing the store's arrays (grads live on these)."""
    return {idx: {name: T.Tensor(arr, requires_grad=requires_grad)
                  for name, arr in layer.items()}
            for idx, layer in weights.items()}


def _masked(params, masks, idx, name, tape):
    w = params[idx][name]
    layer_masks = masks.get(idx)
    if layer_masks is not None and name in layer_masks:
        return T.mul(w, T.Tensor(layer_masks[name]), tape)
    return w


def forward(arch: Architecture, weights, masks, x: T.Tensor,
            tape: Optional[T.Tape] = None,
            param_tensors: Optional[dict] = None) -> T.Tensor:
    """Evaluate the network on a batch; returns logits [B, class_count]."""
    if x.shape[1:] != tuple(arch.input_shape):
        raise DimensionError(
            f"input {x.shape[1:]} does not match {tuple(arch.input_shape)}")
    params = param_tensors if param_tensors is not None \
        else make_param_tensors(weights, requires_grad=False)
    h = x
    for idx, spec in enumerate(arch.layers):
        if spec.kind in (LINEAR, OUTPUT_LINEAR):
            w = _masked(params, masks, idx, "weight", tape)
            h = T.add_bias(T.matmul(h, w, tape), params[idx]["bias"], tape)
        elif spec.kind == RELU:
            h = T.relu(h, tape)
        elif spec.kind == FLATTEN:
            h = T.flatten(h, tape)
        elif spec.kind == CONV:
            w = _masked(params, masks, idx, "weight", tape)
            h = T.conv2d(h, w, spec.stride, spec.padding, tape)
            h = T.add_channel_bias(h, params[idx]["bias"], tape)
        elif spec.kind == BASIC_BLOCK:
            w1 = _masked(params, masks, idx, "conv1_weight", tape)
            w2 = _masked(params, masks, idx, "conv2_weight", tape)
            inner = T.conv2d(h, w1, spec.stride, spec.padding, tape)
            inner = T.add_channel_bias(inner, params[idx]["conv1_bias"], tape)
            inner = T.relu(inner, tape)
            inner = T.conv2d(inner, w2, spec.stride, spec.padding, tape)
            inner = T.add_channel_bias(inner, params[idx]["conv2_bias"], tape)
            h = T.relu(T.add(inner, h, tape), tape)
        else:
            raise ArchitectureError(f"unknown layer kind {spec.kind!r}")
    return h


# ---------------------------------------------------------------------------
# structural relations

def is_spanning_subnetwork(child, parent) -> bool:
    """True iff same layer list and child's connections are a subset.

    Each argument is an (Architecture, MaskSet) pair. Missing masks mean
    dense (all ones).
    """
    child_arch, child_masks = child
    parent_arch, parent_masks = parent
    if child_arch.input_shape != parent_arch.input_shape:
        return False
    if child_arch.class_count != parent_arch.class_count:
        return False
    if child_arch.layers != parent_arch.layers:
        return False
    for idx, spec in enumerate(child_arch.layers):
        for name in weight_names(spec):
            cm = child_masks.get(idx, {}).get(name)
            pm = parent_masks.get(idx, {}).get(name)
            if cm is None and pm is None:
                continue
            shape = param_shapes(spec)[name]
            if cm is None:
                cm = np.ones(shape, dtype=np.float32)
            if pm is None:
                pm = np.ones(shape, dtype=np.float32)
            if np.any(cm > pm):
                return False
    return True


def surviving_param_count(weights: dict, masks: dict) -> int:
    """Surviving prunable weights plus every unmasked parameter."""
    survived = 0
    masked_total = 0
    for idx, layer in masks.items():
        for name, m in layer.items():
            survived += int(m.sum())
            masked_total += m.size
    return survived + (total_param_count(weights) - masked_total)


def compression_ratio(weights: dict, masks: dict, reference_count: int) -> float:
    if reference_count <= 0:
        raise ValueError("reference_count must be positive")
    return surviving_param_count(weights, masks) / reference_count
