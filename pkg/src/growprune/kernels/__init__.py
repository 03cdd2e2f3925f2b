"""Conv kernel backends.

Two interchangeable implementations of the three conv primitives:

* ``numpy`` — im2col/col2im with BLAS matmuls (always available)
* ``compiled`` — Cython direct-loop kernels, built at install time

The active backend is picked at import: the compiled one when present, else
numpy. ``GROWPRUNE_CONV_BACKEND`` (``auto`` | ``compiled`` | ``numpy``)
overrides, and runs record the resolved name in their manifest so a rerun
reproduces the same arithmetic.
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import reference

try:
    from . import _convcore
except ImportError:
    _convcore = None

_BACKENDS = {"numpy": reference}
if _convcore is not None:
    _BACKENDS["compiled"] = _convcore


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def resolve_backend(name: str = "auto") -> str:
    if name == "auto":
        return "compiled" if _convcore is not None else "numpy"
    if name not in _BACKENDS:
        raise ConfigError(
            f"conv backend {name!r} not available (have: {available_backends()})")
    return name


_active = _BACKENDS[resolve_backend(os.environ.get("GROWPRUNE_CONV_BACKEND", "auto"))]


def active_backend() -> str:
    return _active.NAME


def use_backend(name: str) -> str:
    """Switch the process-wide backend; returns the resolved name."""
    global _active
    resolved = resolve_backend(name)
    _active = _BACKENDS[resolved]
    return resolved


def conv2d_forward(x, kernel, stride, padding):
    return _active.conv2d_forward(x, kernel, stride, padding)


def conv2d_backward_input(grad, kernel, x_shape, stride, padding):
    return _active.conv2d_backward_input(grad, kernel, x_shape, stride, padding)


def conv2d_backward_kernel(grad, x, k, stride, padding):
    return _active.conv2d_backward_kernel(grad, x, k, stride, padding)
