"""Adam with bias correction over index-keyed parameter stores.

Moments are float64 (parameters stay float32) and each parameter tensor has
its own step counter, so a layer inserted mid-run starts its bias correction
from t=0 while old layers keep theirs. Masked positions are hard-zeroed in
both the weights and the moments after every update; gradient flow into a
pruned weight is annihilated rather than accumulated.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


class AdamState:
    def __init__(self, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        # (layer index, param name) -> {"m": f64, "v": f64, "t": int}
        self.slots: dict[tuple[int, str], dict] = {}

    def slot(self, key: tuple[int, str], shape) -> dict:
        s = self.slots.get(key)
        if s is None:
            s = {"m": np.zeros(shape, dtype=np.float64),
                 "v": np.zeros(shape, dtype=np.float64),
                 "t": 0}
            self.slots[key] = s
        return s

    def remap(self, index_map: dict[int, int]) -> "AdamState":
        """New state with layer indices translated (for layer insertion)."""
        out = AdamState(self.lr, self.beta1, self.beta2, self.eps)
        for (idx, name), s in self.slots.items():
            out.slots[(index_map[idx], name)] = {
                "m": s["m"].copy(), "v": s["v"].copy(), "t": s["t"]}
        return out

    def clone(self) -> "AdamState":
        return self.remap({idx: idx for (idx, _name) in self.slots})


def adam_step(weights: dict, grads: dict, masks: dict, state: AdamState):
    """One update over every (layer, param) present in grads.

    grads mirrors the weights structure: dict[layer index][param name] ->
    float32 gradient array.
    """
    b1, b2 = state.beta1, state.beta2
    for idx in sorted(grads):
        for name, g in grads[idx].items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for layer {idx} {name}")
            w = weights[idx][name]
            s = state.slot((idx, name), w.shape)
            s["t"] += 1
            t = s["t"]
            m, v = s["m"], s["v"]
            g64 = g.astype(np.float64)
            m *= b1
            m += (1.0 - b1) * g64
            v *= b2
            v += (1.0 - b2) * (g64 * g64)
            mhat = m / (1.0 - b1 ** t)
            vhat = v / (1.0 - b2 ** t)
            w64 = w.astype(np.float64)
            w64 -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
            w[...] = w64.astype(np.float32)
            layer_masks = masks.get(idx)
            if layer_masks is not None and name in layer_masks:
                mask = layer_masks[name]
                w *= mask
                m *= mask
                v *= mask
