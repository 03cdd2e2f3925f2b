# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv kernels: direct loops over zero-padded float32 buffers.

Parallelism is over axes each thread owns exclusively (batch for forward and
backward-input, output channel for backward-kernel), so results are
bit-identical regardless of thread count.
"""

import numpy as np

cimport cython
from cython.parallel import prange

NAME = "compiled"


def _pad(x, int padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.ascontiguousarray(
        np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))))


def conv2d_forward(x, kernel, int stride, int padding):
    cdef int b = x.shape[0], cin = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int cout = kernel.shape[0], k = kernel.shape[2]
    cdef int oh = (h + 2 * padding - k) // stride + 1
    cdef int ow = (w + 2 * padding - k) // stride + 1
    xp_arr = _pad(x, padding)
    out_arr = np.zeros((b, cout, oh, ow), dtype=np.float32)
    cdef float[:, :, :, ::1] xp = xp_arr
    cdef float[:, :, :, ::1] kw = np.ascontiguousarray(kernel)
    cdef float[:, :, :, ::1] out = out_arr
    cdef int ib, co, ci, kh, kj, i, j
    cdef float kv
    with nogil:
        for ib in prange(b, schedule='static'):
            for co in range(cout):
                for ci in range(cin):
                    for kh in range(k):
                        for kj in range(k):
                            kv = kw[co, ci, kh, kj]
                            if kv == 0.0:
                                continue
                            for i in range(oh):
                                for j in range(ow):
                                    out[ib, co, i, j] = out[ib, co, i, j] + \
                                        kv * xp[ib, ci, i * stride + kh, j * stride + kj]
    return out_arr


def conv2d_backward_input(grad, kernel, x_shape, int stride, int padding):
    cdef int b = x_shape[0], cin = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef int cout = kernel.shape[0], k = kernel.shape[2]
    cdef int oh = grad.shape[2], ow = grad.shape[3]
    dxp_arr = np.zeros((b, cin, h + 2 * padding, w + 2 * padding),
                       dtype=np.float32)
    cdef float[:, :, :, ::1] dxp = dxp_arr
    cdef float[:, :, :, ::1] g = np.ascontiguousarray(grad)
    cdef float[:, :, :, ::1] kw = np.ascontiguousarray(kernel)
    cdef int ib, co, ci, kh, kj, i, j
    cdef float kv
    with nogil:
        for ib in prange(b, schedule='static'):
            for co in range(cout):
                for ci in range(cin):
                    for kh in range(k):
                        for kj in range(k):
                            kv = kw[co, ci, kh, kj]
                            if kv == 0.0:
                                continue
                            for i in range(oh):
                                for j in range(ow):
                                    dxp[ib, ci, i * stride + kh, j * stride + kj] = \
                                        dxp[ib, ci, i * stride + kh, j * stride + kj] + \
                                        kv * g[ib, co, i, j]
    if padding:
        return np.ascontiguousarray(
            dxp_arr[:, :, padding:padding + h, padding:padding + w])
    return dxp_arr


def conv2d_backward_kernel(grad, x, int k, int stride, int padding):
    cdef int b = x.shape[0], cin = x.shape[1]
    cdef int cout = grad.shape[1], oh = grad.shape[2], ow = grad.shape[3]
    xp_arr = _pad(x, padding)
    gk_arr = np.zeros((cout, cin, k, k), dtype=np.float32)
    cdef float[:, :, :, ::1] xp = xp_arr
    cdef float[:, :, :, ::1] g = np.ascontiguousarray(grad)
    cdef float[:, :, :, ::1] gk = gk_arr
    cdef int ib, co, ci, kh, kj, i, j
    cdef float acc
    with nogil:
        for co in prange(cout, schedule='static'):
            for ci in range(cin):
                for kh in range(k):
                    for kj in range(k):
                        acc = 0.0
                        for ib in range(b):
                            for i in range(oh):
                                for j in range(ow):
                                    acc = acc + g[ib, co, i, j] * \
                                        xp[ib, ci, i * stride + kh, j * stride + kj]
                        gk[co, ci, kh, kj] = acc
    return gk_arr
