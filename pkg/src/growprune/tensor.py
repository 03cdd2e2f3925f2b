"""Dense float32 tensors with tape-based reverse-mode differentiation.

Covers exactly the primitives the two experiment families need: matmul,
conv2d (cross-correlation, no kernel flip), relu, elementwise add/mul,
bias adds, flatten, sum, and softmax cross-entropy. No broadcasting beyond
the bias adds.

Every primitive checks its output for NaN/Inf and raises NumericError
naming the operation; the same check runs on every gradient produced during
backward. Loss reductions are accumulated in float64, everything else is
float32.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, GrowPruneError, NumericError


class Tensor:
    """Contiguous row-major float32 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(())[()])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Execution-ordered record of primitives for one forward pass.

    Records are appended as operations execute, so the list order is a
    topological order of the computation; one reverse sweep fills in every
    reachable leaf gradient.
    """

    def __init__(self):
        self._records: list[tuple[str, Tensor, Callable[[], None]]] = []

    def record(self, op: str, output: Tensor, pull: Callable[[], None]):
        self._records.append((op, output, pull))

    def __len__(self):
        return len(self._records)

    @property
    def last_output(self) -> Optional[Tensor]:
        return self._records[-1][1] if self._records else None


def _check_finite(op: str, arr: np.ndarray, phase: str = "forward"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in {phase} of {op}")


def _accumulate(op: str, t: Tensor, g: np.ndarray):
    _check_finite(op, g, phase="backward")
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float32, copy=True)
    else:
        t.grad = t.grad + g


def _wants_grad(tape: Optional[Tape], *tensors: Tensor) -> bool:
    return tape is not None and any(t.requires_grad for t in tensors)


def _finish(op: str, tape: Optional[Tape], out: Tensor,
            inputs: Sequence[Tensor], pulls: Sequence[Callable]):
    """Register a record that routes out.grad into each input's pull rule."""
    _check_finite(op, out.data)
    if not _wants_grad(tape, *inputs):
        return out
    out.requires_grad = True

    def pull():
        if out.grad is None:
            return
        g = out.grad
        for t, rule in zip(inputs, pulls):
            if t.requires_grad:
                _accumulate(op, t, rule(g))

    tape.record(op, out, pull)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    return _finish("matmul", tape, out, (a, b),
                   (lambda g: g @ b.data.T, lambda g: a.data.T @ g))


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return _finish("add", tape, out, (a, b), (lambda g: g, lambda g: g))


def mul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    return _finish("mul", tape, out, (a, b),
                   (lambda g: g * b.data, lambda g: g * a.data))


def add_bias(x: Tensor, bias: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """[B,N] + [N], gradient for bias sums over the batch."""
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise DimensionError(f"add_bias {x.shape} + {bias.shape}")
    out = Tensor(x.data + bias.data)
    return _finish("add_bias", tape, out, (x, bias),
                   (lambda g: g, lambda g: g.sum(axis=0)))


def add_channel_bias(x: Tensor, bias: Tensor,
                     tape: Optional[Tape] = None) -> Tensor:
    """[B,C,H,W] + [C], gradient for bias sums over batch and space."""
    if x.data.ndim != 4 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise DimensionError(f"add_channel_bias {x.shape} + {bias.shape}")
    out = Tensor(x.data + bias.data[None, :, None, None])
    return _finish("add_channel_bias", tape, out, (x, bias),
                   (lambda g: g, lambda g: g.sum(axis=(0, 2, 3))))


def relu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    # subgradient at exactly 0 is 0
    return _finish("relu", tape, out, (x,),
                   (lambda g: g * (x.data > 0),))


def flatten(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """[B, ...] -> [B, prod(...)] view-preserving reshape."""
    if x.data.ndim < 2:
        raise DimensionError(f"flatten needs a batch dim, got {x.shape}")
    b = x.shape[0]
    out = Tensor(x.data.reshape(b, -1))
    return _finish("flatten", tape, out, (x,),
                   (lambda g: g.reshape(x.shape),))


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
           tape: Optional[Tape] = None) -> Tensor:
    """Cross-correlation of [B,Cin,H,W] with [Cout,Cin,k,k]."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-d input/kernel, got {x.shape}/{kernel.shape}")
    b, cin, h, w = x.shape
    cout, kcin, k, k2 = kernel.shape
    if kcin != cin or k != k2:
        raise DimensionError(f"conv2d kernel {kernel.shape} vs input {x.shape}")
    if (h + 2 * padding - k) % stride or (w + 2 * padding - k) % stride:
        raise DimensionError(
            f"conv2d output extent not integral for input {h}x{w}, "
            f"k={k}, stride={stride}, padding={padding}")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise DimensionError(f"conv2d kernel {k} larger than padded input")
    out = Tensor(kernels.conv2d_forward(x.data, kernel.data, stride, padding))
    return _finish(
        "conv2d", tape, out, (x, kernel),
        (lambda g: kernels.conv2d_backward_input(g, kernel.data, x.shape,
                                                 stride, padding),
         lambda g: kernels.conv2d_backward_kernel(g, x.data, k, stride,
                                                  padding)))


def tensor_sum(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(np.float32(x.data.sum(dtype=np.float64)))
    return _finish("sum", tape, out, (x,),
                   (lambda g: np.full(x.shape, g.reshape(())[()],
                                      dtype=np.float32),))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray,
                          tape: Optional[Tape] = None) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    Max-shifted log-sum-exp in float64 for stability; the gradient is
    (softmax - onehot) / B.
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be [B,C], got {logits.shape}")
    b, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape}, expected ({b},)")
    if labels.size == 0 or labels.min() < 0 or labels.max() >= c:
        raise GrowPruneError(f"labels must lie in [0, {c}) and be nonempty")
    z = logits.data.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logprobs = z - logsumexp
    loss = np.float32(-logprobs[np.arange(b), labels].mean())
    softmax = np.exp(logprobs).astype(np.float32)
    out = Tensor(loss)

    def pull_logits(g):
        grad = softmax.copy()
        grad[np.arange(b), labels] -= 1.0
        return grad * (g.reshape(())[()] / np.float32(b))

    return _finish("softmax_cross_entropy", tape, out, (logits,),
                   (pull_logits,))


def backward(loss: Tensor, tape: Tape):
    """Reverse sweep: fills .grad of every requires_grad leaf under loss."""
    if loss.data.size != 1:
        raise GrowPruneError(
            f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.last_output is not loss:
        raise GrowPruneError("loss is not the terminal output of the tape")
    loss.grad = np.ones_like(loss.data)
    for _, _, pull in reversed(tape._records):
        pull()
