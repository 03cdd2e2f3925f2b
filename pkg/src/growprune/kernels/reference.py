"""numpy conv kernels (im2col / col2im, BLAS matmuls).

Cross-correlation convention: no kernel flip. All arrays are float32,
NCHW activations, OIHW kernels.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def _out_extent(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """[B,C,H,W] -> [B, C*k*k, OH*OW] patch matrix (copies once)."""
    b, c, h, w = x.shape
    oh = _out_extent(h, k, stride, padding)
    ow = _out_extent(w, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sb, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, k, k, oh, ow),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(b, c * k * k, oh * ow)


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, stride: int,
                   padding: int) -> np.ndarray:
    b, _, h, w = x.shape
    cout, cin, k, _ = kernel.shape
    oh = _out_extent(h, k, stride, padding)
    ow = _out_extent(w, k, stride, padding)
    cols = _im2col(x, k, stride, padding)
    out = np.matmul(kernel.reshape(cout, cin * k * k), cols)
    return out.reshape(b, cout, oh, ow)


def conv2d_backward_input(grad: np.ndarray, kernel: np.ndarray,
                          x_shape, stride: int, padding: int) -> np.ndarray:
    b, cin, h, w = x_shape
    cout, _, k, _ = kernel.shape
    _, _, oh, ow = grad.shape
    # dcols[b, C*k*k, OH*OW] = K^T @ grad, then scatter-add back (col2im)
    dcols = np.matmul(kernel.reshape(cout, cin * k * k).T,
                      grad.reshape(b, cout, oh * ow))
    dcols = dcols.reshape(b, cin, k, k, oh, ow)
    dxp = np.zeros((b, cin, h + 2 * padding, w + 2 * padding), dtype=np.float32)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * oh:stride,
                j:j + stride * ow:stride] += dcols[:, :, i, j]
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding:padding + h,
                                        padding:padding + w])
    return dxp


def conv2d_backward_kernel(grad: np.ndarray, x: np.ndarray, k: int,
                           stride: int, padding: int) -> np.ndarray:
    b, cin, _, _ = x.shape
    _, cout, oh, ow = (grad.shape[0], grad.shape[1], grad.shape[2],
                       grad.shape[3])
    cols = _im2col(x, k, stride, padding)          # [B, Cin*k*k, OH*OW]
    g2 = grad.transpose(1, 0, 2, 3).reshape(cout, b * oh * ow)
    c2 = cols.transpose(1, 0, 2).reshape(cin * k * k, b * oh * ow)
    gk = np.matmul(g2, np.ascontiguousarray(c2).T)
    return gk.reshape(cout, cin, k, k)
