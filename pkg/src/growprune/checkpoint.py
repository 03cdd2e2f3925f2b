"""Checkpoints: the unit of persistence and the site of network growth.

A checkpoint bundles architecture, weights, masks, the recorded initial
weights (extended as layers are grown), optimizer state, named rng stream
states, and the cycle/metrics cursors.

File format (single file, little-endian):

    8 bytes   magic ``GPNCKPT1``
    u32       format version (1)
    u64       metadata length, then that many bytes of UTF-8 JSON
              (architecture, rng streams, optimizer hyperparams/steps,
              cursors, init scheme, tensor directory order)
    u32       tensor record count, then per record:
                u16 name length + name bytes
                u8 dtype code (0 = float32, 1 = float64)
                u8 ndim, ndim x u64 dims
                u64 payload byte length + raw little-endian payload

Round trips are bit-exact: loading and re-saving produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import GrowthError, PersistenceError
from .network import (Architecture, LayerSpec, BASIC_BLOCK, CONV, LINEAR,
                      OUTPUT_LINEAR, build_network, init_layer_params,
                      param_shapes, propagate_shapes, weight_names, FLATTEN)
from .optim import AdamState
from .rng import SeededRng

MAGIC = b"GPNCKPT1"
FORMAT_VERSION = 1
INIT_SCHEME = "uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases"

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


@dataclass
class Checkpoint:
    arch: Architecture
    weights: dict
    masks: dict
    initial_weights: dict
    adam: AdamState
    rng_streams: dict[str, dict] = field(default_factory=dict)
    cycle_index: int = 0
    metrics_cursor: int = 0

    @classmethod
    def new(cls, arch: Architecture, seed: int, lr: float = 0.001) -> "Checkpoint":
        """Build a fresh network and record its initial weights.

        Spawns the named substreams (init, shuffle) from the master seed;
        initialization consumes only the init stream.
        """
        master = SeededRng(seed)
        init_rng = master.spawn("init")
        shuffle_rng = master.spawn("shuffle")
        weights, masks = build_network(arch, init_rng)
        initial = _copy_store(weights)
        return cls(arch=arch, weights=weights, masks=masks,
                   initial_weights=initial, adam=AdamState(lr=lr),
                   rng_streams={"init": init_rng.state(),
                                "shuffle": shuffle_rng.state()})

    def stream(self, name: str) -> SeededRng:
        """Live rng for a named stream; call save_stream to persist draws."""
        return SeededRng.from_state(self.rng_streams[name])

    def save_stream(self, name: str, rng: SeededRng):
        self.rng_streams[name] = rng.state()

    def clone(self) -> "Checkpoint":
        return Checkpoint(
            arch=self.arch.clone(),
            weights=_copy_store(self.weights),
            masks=_copy_store(self.masks),
            initial_weights=_copy_store(self.initial_weights),
            adam=self.adam.clone(),
            rng_streams=json.loads(json.dumps(self.rng_streams)),
            cycle_index=self.cycle_index,
            metrics_cursor=self.metrics_cursor)


def _copy_store(store: dict) -> dict:
    return {idx: {name: arr.copy() for name, arr in layer.items()}
            for idx, layer in store.items()}


# ---------------------------------------------------------------------------
# growth

def default_insertion_index(arch: Architecture) -> int:
    """Immediately before the output layer (before a trailing flatten)."""
    idx = len(arch.layers) - 1
    if arch.layers[idx].kind != OUTPUT_LINEAR:
        raise GrowthError("architecture has no output layer to insert before")
    if idx > 0 and arch.layers[idx - 1].kind == FLATTEN:
        return idx - 1
    return idx


def _dirac(channels: int, k: int) -> np.ndarray:
    w = np.zeros((channels, channels, k, k), dtype=np.float32)
    for c in range(channels):
        w[c, c, k // 2, k // 2] = 1.0
    return w


def _identity_params(spec: LayerSpec, variant: str) -> dict[str, np.ndarray]:
    if spec.kind == LINEAR:
        if spec.in_dim != spec.out_dim:
            raise GrowthError(
                f"identity init needs a square linear layer, got "
                f"({spec.in_dim},{spec.out_dim})")
        return {"weight": np.eye(spec.in_dim, dtype=np.float32),
                "bias": np.zeros(spec.out_dim, dtype=np.float32)}
    if spec.kind == CONV:
        if spec.in_ch != spec.out_ch or spec.kernel_size % 2 == 0:
            raise GrowthError("identity conv needs in_ch == out_ch and odd k")
        return {"weight": _dirac(spec.in_ch, spec.kernel_size),
                "bias": np.zeros(spec.out_ch, dtype=np.float32)}
    if spec.kind == BASIC_BLOCK:
        if spec.kernel_size % 2 == 0:
            raise GrowthError("identity basic block needs odd kernel size")
        k, c = spec.kernel_size, spec.in_ch
        # Dirac on conv1; conv2 zero so relu(conv2(relu(conv1 x)) + x) == relu(x),
        # exactly the identity on the nonnegative activations feeding it.
        # (variant "double_dirac" puts Dirac on both, giving relu(2x).)
        second = _dirac(c, k) if variant == "double_dirac" else \
            np.zeros((c, c, k, k), dtype=np.float32)
        return {"conv1_weight": _dirac(c, k),
                "conv1_bias": np.zeros(c, dtype=np.float32),
                "conv2_weight": second,
                "conv2_bias": np.zeros(c, dtype=np.float32)}
    if spec.kind in (RELU := "relu", FLATTEN):
        return {}
    raise GrowthError(f"cannot identity-initialize a {spec.kind} layer")


def grow_network(ckpt: Checkpoint,
                 insertion: Union[LayerSpec, Sequence[LayerSpec]],
                 position: Optional[int] = None,
                 rng: Optional[SeededRng] = None,
                 init: str = "identity",
                 identity_variant: str = "exact") -> Checkpoint:
    """Insert layers, returning a new Checkpoint; the old one is untouched.

    Identity init (default) makes the inserted unit compute the exact
    identity map so the network function is preserved at the moment of
    growth; init="random" draws from the usual distribution instead.
    Inserted parameters are appended to the initial-weight record at their
    inserted values, and their masks start all-ones.
    """
    specs = [insertion] if isinstance(insertion, LayerSpec) else list(insertion)
    if not specs:
        raise GrowthError("empty insertion")
    if position is None:
        position = default_insertion_index(ckpt.arch)
    if not 0 <= position <= len(ckpt.arch.layers):
        raise GrowthError(f"insertion position {position} out of range")

    new = ckpt.clone()
    inserted = []
    for spec in specs:
        spec = LayerSpec.from_dict(spec.to_dict())
        spec.grown_at_iteration = ckpt.cycle_index
        inserted.append(spec)
    new.arch.layers[position:position] = inserted
    new.arch.validate()
    propagate_shapes(new.arch)

    shift = len(inserted)
    index_map = {idx: idx if idx < position else idx + shift
                 for idx in range(len(ckpt.arch.layers))}
    new.weights = {index_map[i]: layer for i, layer in new.weights.items()}
    new.masks = {index_map[i]: layer for i, layer in new.masks.items()}
    new.initial_weights = {index_map[i]: layer
                           for i, layer in new.initial_weights.items()}
    new.adam = new.adam.remap(index_map)

    for offset, spec in enumerate(inserted):
        if not param_shapes(spec):
            continue
        idx = position + offset
        if init == "identity":
            params = _identity_params(spec, identity_variant)
        elif init == "random":
            if rng is None:
                raise GrowthError("random growth init needs an rng")
            params = init_layer_params(spec, rng)
        else:
            raise GrowthError(f"unknown growth init {init!r}")
        new.weights[idx] = params
        new.initial_weights[idx] = {n: p.copy() for n, p in params.items()}
        if spec.prunable:
            new.masks[idx] = {n: np.ones(params[n].shape, dtype=np.float32)
                              for n in weight_names(spec)}
    return new


# ---------------------------------------------------------------------------
# persistence

def _tensor_entries(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    entries = []
    for prefix, store in (("w", ckpt.weights), ("m", ckpt.masks),
                          ("w0", ckpt.initial_weights)):
        for idx in sorted(store):
            for name in sorted(store[idx]):
                entries.append((f"{prefix}/{idx}/{name}", store[idx][name]))
    for (idx, name) in sorted(ckpt.adam.slots):
        s = ckpt.adam.slots[(idx, name)]
        entries.append((f"am/{idx}/{name}", s["m"]))
        entries.append((f"av/{idx}/{name}", s["v"]))
    return entries


def save_checkpoint(ckpt: Checkpoint, path):
    meta = {
        "format_version": FORMAT_VERSION,
        "architecture": ckpt.arch.to_dict(),
        "init_scheme": INIT_SCHEME,
        "rng_streams": ckpt.rng_streams,
        "cycle_index": ckpt.cycle_index,
        "metrics_cursor": ckpt.metrics_cursor,
        "adam": {"lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1,
                 "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps,
                 "steps": {f"{idx}/{name}": s["t"]
                           for (idx, name), s in sorted(ckpt.adam.slots.items())}},
    }
    meta_bytes = json.dumps(meta, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
    entries = _tensor_entries(ckpt)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            code = _DTYPE_CODES[arr.dtype]
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise PersistenceError("checkpoint file truncated")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 8) != MAGIC:
            raise PersistenceError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != FORMAT_VERSION:
            raise PersistenceError(f"{path}: unsupported version {version}")
        (meta_len,) = struct.unpack("<Q", _read_exact(f, 8))
        try:
            meta = json.loads(_read_exact(f, meta_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise PersistenceError(f"{path}: corrupt metadata ({exc})") from None
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(f, 2))
            if code not in _DTYPES:
                raise PersistenceError(f"{path}: unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim))
            (nbytes,) = struct.unpack("<Q", _read_exact(f, 8))
            arr = np.frombuffer(_read_exact(f, nbytes),
                                dtype=_DTYPES[code]).reshape(shape)
            tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        if f.read(1):
            raise PersistenceError(f"{path}: trailing bytes after payload")

    arch = Architecture.from_dict(meta["architecture"])
    adam_meta = meta["adam"]
    adam = AdamState(lr=adam_meta["lr"], beta1=adam_meta["beta1"],
                     beta2=adam_meta["beta2"], eps=adam_meta["eps"])
    stores: dict[str, dict] = {"w": {}, "m": {}, "w0": {}, "am": {}, "av": {}}
    for full_name, arr in tensors.items():
        try:
            prefix, idx, name = full_name.split("/")
            stores[prefix].setdefault(int(idx), {})[name] = arr
        except (ValueError, KeyError):
            raise PersistenceError(
                f"{path}: unrecognized tensor entry {full_name!r}") from None
    for key, t in adam_meta["steps"].items():
        idx_s, name = key.split("/")
        idx = int(idx_s)
        adam.slots[(idx, name)] = {"m": stores["am"][idx][name],
                                   "v": stores["av"][idx][name],
                                   "t": int(t)}
    ckpt = Checkpoint(arch=arch, weights=stores["w"], masks=stores["m"],
                      initial_weights=stores["w0"], adam=adam,
                      rng_streams=meta["rng_streams"],
                      cycle_index=int(meta["cycle_index"]),
                      metrics_cursor=int(meta["metrics_cursor"]))
    _validate_stores(ckpt)
    return ckpt


def _validate_stores(ckpt: Checkpoint):
    for idx, spec in enumerate(ckpt.arch.layers):
        shapes = param_shapes(spec)
        if not shapes:
            continue
        layer = ckpt.weights.get(idx)
        if layer is None:
            raise PersistenceError(f"missing weights for layer {idx}")
        for name, shape in shapes.items():
            if name not in layer or layer[name].shape != shape:
                raise PersistenceError(
                    f"layer {idx} parameter {name} has wrong shape")
