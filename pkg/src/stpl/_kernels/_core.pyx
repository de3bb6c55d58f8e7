# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: the im2col / col2im hot loops.

Same contract as fallback.py (see its docstring for the column layout).
Fused-typed over f32/f64 so the 64-bit gradient-check path exercises the
same code as the 32-bit training path.
"""

import numpy as np

cimport cython

ctypedef fused floating:
    float
    double

BACKEND = "compiled"


def im2col(const floating[:, :, :, ::1] x, int kh, int kw, int stride, int padding, int dilation):
    cdef Py_ssize_t b = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t h = x.shape[2]
    cdef Py_ssize_t w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((b, c * kh * kw, ho * wo), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, ki, kj, oi, oj, row, ii, jj
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ci * kh + ki) * kw + kj
                        for oi in range(ho):
                            ii = oi * stride - padding + ki * dilation
                            if ii < 0 or ii >= h:
                                for oj in range(wo):
                                    out[bi, row, oi * wo + oj] = 0.0
                                continue
                            for oj in range(wo):
                                jj = oj * stride - padding + kj * dilation
                                if 0 <= jj < w:
                                    out[bi, row, oi * wo + oj] = x[bi, ci, ii, jj]
                                else:
                                    out[bi, row, oi * wo + oj] = 0.0
    return out_arr


def col2im(const floating[:, :, ::1] col, int height, int width, int kh, int kw,
           int stride, int padding, int dilation):
    cdef Py_ssize_t b = col.shape[0]
    cdef Py_ssize_t c = col.shape[1] // (kh * kw)
    cdef Py_ssize_t ho = (height + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    cdef Py_ssize_t wo = (width + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((b, c, height, width), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, ki, kj, oi, oj, row, ii, jj
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ci * kh + ki) * kw + kj
                        for oi in range(ho):
                            ii = oi * stride - padding + ki * dilation
                            if ii < 0 or ii >= height:
                                continue
                            for oj in range(wo):
                                jj = oj * stride - padding + kj * dilation
                                if 0 <= jj < width:
                                    out[bi, ci, ii, jj] += col[bi, row, oi * wo + oj]
    return out_arr
