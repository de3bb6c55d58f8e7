"""Pure-numpy kernel backend: im2col / col2im via stride tricks.

Semantics match the compiled core in _core.pyx exactly; the selector in
__init__ prefers the compiled module and falls back to this one. Both
backends leave the GEMM side of convolution to numpy's BLAS, so the only
difference is how patch gathering (im2col) and its scatter-add adjoint
(col2im) are realized.

Column layout: row index (c * kh + ki) * kw + kj, position index
oi * out_w + oj. Callers guarantee contiguous f32/f64 inputs and exact
output extents; these functions do no validation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND = "fallback"


def _out_extent(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def im2col(x, kh, kw, stride, padding, dilation):
    """[B,C,H,W] -> [B, C*kh*kw, out_h*out_w] patch matrix."""
    b, c, h, w = x.shape
    ho = _out_extent(h, kh, stride, padding, dilation)
    wo = _out_extent(w, kw, stride, padding, dilation)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sb, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(b, c, kh, kw, ho, wo),
        strides=(sb, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view.reshape(b, c * kh * kw, ho * wo))


def col2im(col, height, width, kh, kw, stride, padding, dilation):
    """Scatter-add adjoint of im2col into a [B,C,height,width] array."""
    b = col.shape[0]
    c = col.shape[1] // (kh * kw)
    ho = _out_extent(height, kh, stride, padding, dilation)
    wo = _out_extent(width, kw, stride, padding, dilation)
    cols = col.reshape(b, c, kh, kw, ho, wo)
    buf = np.zeros((b, c, height + 2 * padding, width + 2 * padding), dtype=col.dtype)
    # Per (ki,kj) tap the target indices are distinct, so strided += is safe.
    for ki in range(kh):
        i0 = ki * dilation
        for kj in range(kw):
            j0 = kj * dilation
            buf[:, :, i0 : i0 + ho * stride : stride, j0 : j0 + wo * stride : stride] += cols[
                :, :, ki, kj
            ]
    if padding:
        return np.ascontiguousarray(buf[:, :, padding:-padding, padding:-padding])
    return buf
