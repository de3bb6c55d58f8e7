"""Dense float tensors and the forward kernels behind every model operation.

Layout contract: row-major (last axis fastest), 1 to 5 axes, positive
extents, 32- or 64-bit floats. 32-bit is the model's arithmetic; the 64-bit
path exists so gradient checks and oracles can separate algorithmic error
from rounding. Every public op is a pure function returning a new tensor
(reshape-family ops may return views; tensors are never mutated through this
API), so identical inputs give bitwise-identical outputs within one build.

Convolution is cross-correlation (no kernel flip). Output extents must come
out exact: a stride that does not evenly tile the padded input is a
configuration error, not a silent floor.

Each differentiable primitive has an array-level forward (`_*_arrays`) and
backward (`_*_grads`) pair shared with the autograd module; the public
functions here validate and run the forward only. PRIMITIVES lists every op
that the autograd module must cover with a backward rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Dense N-d float array, rank 1..5, contiguous row-major."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and not (
            isinstance(data, np.ndarray) and data.dtype in _ALLOWED_DTYPES
        ):
            # Python scalars/lists land on the model dtype, not numpy's f64.
            dtype = np.float32
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        _check_rank_extents(arr.shape)
        self.data = np.ascontiguousarray(arr)

    @staticmethod
    def _wrap(arr: np.ndarray) -> "Tensor":
        # Zero-copy construction for freshly computed arrays. The caller
        # guarantees dtype, rank and contiguity.
        t = object.__new__(Tensor)
        t.data = arr
        return t

    @staticmethod
    def zeros(shape, dtype=np.float32) -> "Tensor":
        _check_rank_extents(tuple(shape))
        return Tensor._wrap(np.zeros(tuple(shape), dtype=dtype))

    @staticmethod
    def full(shape, value, dtype=np.float32) -> "Tensor":
        _check_rank_extents(tuple(shape))
        return Tensor._wrap(np.full(tuple(shape), value, dtype=dtype))

    @staticmethod
    def scalar(value, dtype=np.float32) -> "Tensor":
        return Tensor._wrap(np.full((1,), value, dtype=dtype))

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise ConfigError(f"item() needs a single-element tensor, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor._wrap(np.ascontiguousarray(self.data.astype(dtype)))

    def copy(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def _check_rank_extents(shape) -> None:
    if not (1 <= len(shape) <= 5):
        raise ConfigError(f"tensor rank must be 1..5, got {len(shape)}")
    for axis, extent in enumerate(shape):
        if extent <= 0:
            raise ConfigError(f"axis {axis} has non-positive extent {extent}")


def _as_tensor(x, name: str) -> Tensor:
    if not isinstance(x, Tensor):
        raise ConfigError(f"{name} must be a Tensor, got {type(x).__name__}")
    return x


def _common_dtype(*tensors: Tensor):
    dtype = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dtype:
            raise ConfigError(f"mixed dtypes {dtype} and {t.dtype}; cast explicitly")
    return dtype


def _require_rank(t: Tensor, rank: int, name: str) -> None:
    if t.rank != rank:
        raise ConfigError(f"{name} must have rank {rank}, got shape {t.shape}")


def _require_axis(t: Tensor, axis: int, extent: int, name: str) -> None:
    if t.shape[axis] != extent:
        raise ConfigError(
            f"{name} axis {axis} has extent {t.shape[axis]}, expected {extent}"
        )


# ---------------------------------------------------------------------------
# Convolution specs


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-d convolution; shared by conv2d and conv_transpose2d."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "dilation", "groups"):
            if getattr(self, field) < 1:
                raise ConfigError(f"ConvSpec.{field} must be positive, got {getattr(self, field)}")
        if self.padding < 0:
            raise ConfigError(f"ConvSpec.padding must be non-negative, got {self.padding}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"channels ({self.in_channels} in, {self.out_channels} out) "
                f"must be divisible by groups ({self.groups})"
            )

    def out_extent(self, size: int, kernel: int) -> int:
        span = size + 2 * self.padding - self.dilation * (kernel - 1) - 1
        if span < 0 or span % self.stride:
            raise ConfigError(
                f"input extent {size} with kernel {kernel}, stride {self.stride}, "
                f"padding {self.padding}, dilation {self.dilation} gives a "
                "non-integral output extent"
            )
        out = span // self.stride + 1
        if out <= 0:
            raise ConfigError(f"output extent {out} not positive for input extent {size}")
        return out

    def transpose_out_extent(self, size: int, kernel: int) -> int:
        out = (size - 1) * self.stride - 2 * self.padding + self.dilation * (kernel - 1) + 1
        if out <= 0:
            raise ConfigError(
                f"transposed output extent {out} not positive for input extent {size}"
            )
        return out


def depthwise_spec(channels: int, kernel: int, dilation: int = 1) -> ConvSpec:
    """Same-padding depthwise spec; kernel must be odd for exact same-extent."""
    if kernel % 2 == 0:
        raise ConfigError(f"same-padding depthwise kernel must be odd, got {kernel}")
    return ConvSpec(
        in_channels=channels,
        out_channels=channels,
        kernel_h=kernel,
        kernel_w=kernel,
        padding=dilation * (kernel - 1) // 2,
        dilation=dilation,
        groups=channels,
    )


def pointwise_spec(in_channels: int, out_channels: int) -> ConvSpec:
    return ConvSpec(in_channels=in_channels, out_channels=out_channels, kernel_h=1, kernel_w=1)


# ---------------------------------------------------------------------------
# conv2d


def _check_conv2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> None:
    _require_rank(x, 4, "conv2d input")
    _require_rank(weight, 4, "conv2d weight")
    _require_rank(bias, 1, "conv2d bias")
    _require_axis(x, 1, spec.in_channels, "conv2d input")
    expect = (spec.out_channels, spec.in_channels // spec.groups, spec.kernel_h, spec.kernel_w)
    if weight.shape != expect:
        raise ConfigError(f"conv2d weight shape {weight.shape}, expected {expect}")
    _require_axis(bias, 0, spec.out_channels, "conv2d bias")
    _common_dtype(x, weight, bias)


def _conv2d_arrays(x, w, b, spec: ConvSpec):
    batch = x.shape[0]
    ho = spec.out_extent(x.shape[2], spec.kernel_h)
    wo = spec.out_extent(x.shape[3], spec.kernel_w)
    g = spec.groups
    k = (spec.in_channels // g) * spec.kernel_h * spec.kernel_w
    col = _kernels.im2col(x, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding, spec.dilation)
    colg = col.reshape(batch, g, k, ho * wo)
    wg = w.reshape(g, spec.out_channels // g, k)
    out = np.matmul(wg[None], colg).reshape(batch, spec.out_channels, ho, wo)
    out += b.reshape(1, spec.out_channels, 1, 1)
    return out, col


def _conv2d_grads(gout, x_shape, w, col, spec: ConvSpec):
    batch, _, height, width = x_shape
    g = spec.groups
    k = (spec.in_channels // g) * spec.kernel_h * spec.kernel_w
    length = gout.shape[2] * gout.shape[3]
    goutg = gout.reshape(batch, g, spec.out_channels // g, length)
    colg = col.reshape(batch, g, k, length)
    gw = np.matmul(goutg, colg.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
    wg = w.reshape(g, spec.out_channels // g, k)
    gcol = np.matmul(wg.transpose(0, 2, 1)[None], goutg)
    gcol = np.ascontiguousarray(gcol.reshape(batch, spec.in_channels * spec.kernel_h * spec.kernel_w, length))
    gx = _kernels.col2im(gcol, height, width, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding, spec.dilation)
    gb = gout.sum(axis=(0, 2, 3))
    return gx, gw, gb


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    _check_conv2d(x, weight, bias, spec)
    out, _ = _conv2d_arrays(x.data, weight.data, bias.data, spec)
    return Tensor._wrap(out)


# ---------------------------------------------------------------------------
# conv_transpose2d (adjoint weight layout: [Cin, Cout/groups, kh, kw])


def _check_conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> None:
    _require_rank(x, 4, "conv_transpose2d input")
    _require_rank(weight, 4, "conv_transpose2d weight")
    _require_rank(bias, 1, "conv_transpose2d bias")
    _require_axis(x, 1, spec.in_channels, "conv_transpose2d input")
    expect = (spec.in_channels, spec.out_channels // spec.groups, spec.kernel_h, spec.kernel_w)
    if weight.shape != expect:
        raise ConfigError(f"conv_transpose2d weight shape {weight.shape}, expected {expect}")
    _require_axis(bias, 0, spec.out_channels, "conv_transpose2d bias")
    _common_dtype(x, weight, bias)


def _conv_transpose2d_arrays(x, w, b, spec: ConvSpec):
    batch, _, height, width = x.shape
    h2 = spec.transpose_out_extent(height, spec.kernel_h)
    w2 = spec.transpose_out_extent(width, spec.kernel_w)
    g = spec.groups
    k2 = (spec.out_channels // g) * spec.kernel_h * spec.kernel_w
    length = height * width
    xg = x.reshape(batch, g, spec.in_channels // g, length)
    wg = w.reshape(g, spec.in_channels // g, k2)
    col = np.matmul(wg.transpose(0, 2, 1)[None], xg)
    col = np.ascontiguousarray(col.reshape(batch, spec.out_channels * spec.kernel_h * spec.kernel_w, length))
    out = _kernels.col2im(col, h2, w2, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding, spec.dilation)
    out += b.reshape(1, spec.out_channels, 1, 1)
    return out


def _conv_transpose2d_grads(gout, x, w, spec: ConvSpec):
    batch = x.shape[0]
    g = spec.groups
    k2 = (spec.out_channels // g) * spec.kernel_h * spec.kernel_w
    length = x.shape[2] * x.shape[3]
    gcol = _kernels.im2col(
        np.ascontiguousarray(gout), spec.kernel_h, spec.kernel_w, spec.stride, spec.padding, spec.dilation
    )
    gcolg = gcol.reshape(batch, g, k2, length)
    wg = w.reshape(g, spec.in_channels // g, k2)
    gx = np.matmul(wg[None], gcolg).reshape(x.shape)
    xg = x.reshape(batch, g, spec.in_channels // g, length)
    gw = np.matmul(xg, gcolg.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
    gb = gout.sum(axis=(0, 2, 3))
    return gx, gw, gb


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    _check_conv_transpose2d(x, weight, bias, spec)
    return Tensor._wrap(_conv_transpose2d_arrays(x.data, weight.data, bias.data, spec))


# ---------------------------------------------------------------------------
# linear / pooling


def _check_linear(x: Tensor, weight: Tensor, bias: Tensor) -> None:
    _require_rank(x, 2, "linear input")
    _require_rank(weight, 2, "linear weight")
    _require_rank(bias, 1, "linear bias")
    if weight.shape[1] != x.shape[1]:
        raise ConfigError(
            f"linear inner extents disagree: input axis 1 is {x.shape[1]}, "
            f"weight axis 1 is {weight.shape[1]}"
        )
    _require_axis(bias, 0, weight.shape[0], "linear bias")
    _common_dtype(x, weight, bias)


def _linear_arrays(x, w, b):
    return x @ w.T + b


def _linear_grads(gout, x, w):
    return gout @ w, gout.T @ x, gout.sum(axis=0)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    _check_linear(x, weight, bias)
    return Tensor._wrap(_linear_arrays(x.data, weight.data, bias.data))


def _gap_arrays(x):
    return x.mean(axis=(2, 3), keepdims=True)


def _gap_grads(gout, x_shape):
    count = x_shape[2] * x_shape[3]
    return np.broadcast_to(gout / count, x_shape)


def global_avg_pool(x: Tensor) -> Tensor:
    _require_rank(_as_tensor(x, "global_avg_pool input"), 4, "global_avg_pool input")
    return Tensor._wrap(_gap_arrays(x.data))


# ---------------------------------------------------------------------------
# softmax family


def _check_axes(t: Tensor, axes) -> tuple:
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(axes)
    if not axes:
        raise ConfigError("axes must be non-empty")
    if len(set(axes)) != len(axes):
        raise ConfigError(f"duplicate axes in {axes}")
    for a in axes:
        if not (0 <= a < t.rank):
            raise ConfigError(f"axis {a} out of range for rank {t.rank}")
    return tuple(sorted(axes))


def _check_temperature(temperature: float) -> float:
    temperature = float(temperature)
    if not (temperature > 0.0):
        raise ConfigError(f"temperature must be positive, got {temperature}")
    return temperature


def _softmax_core(x, axes, temperature):
    # Max is subtracted in x-space before the temperature division, so adding
    # an exactly-representable constant to a slice cannot change the result.
    m = np.max(x, axis=axes, keepdims=True)
    z = (x - m) / temperature
    e = np.exp(z)
    s = np.sum(e, axis=axes, keepdims=True)
    return z, e, s


def _softmax_arrays(x, axes, temperature):
    z, e, s = _softmax_core(x, axes, temperature)
    return e / s


def _softmax_grads(gout, p, axes, temperature):
    inner = np.sum(gout * p, axis=axes, keepdims=True)
    return p * (gout - inner) / temperature


def softmax_over_axes(x: Tensor, axes, temperature: float = 1.0) -> Tensor:
    axes = _check_axes(_as_tensor(x, "softmax input"), axes)
    temperature = _check_temperature(temperature)
    return Tensor._wrap(_softmax_arrays(x.data, axes, temperature))


def _log_softmax_arrays(x, axes, temperature):
    z, _, s = _softmax_core(x, axes, temperature)
    return z - np.log(s)


def _log_softmax_grads(gout, lp, axes, temperature):
    total = np.sum(gout, axis=axes, keepdims=True)
    return (gout - np.exp(lp) * total) / temperature


def log_softmax_over_axes(x: Tensor, axes, temperature: float = 1.0) -> Tensor:
    axes = _check_axes(_as_tensor(x, "log_softmax input"), axes)
    temperature = _check_temperature(temperature)
    return Tensor._wrap(_log_softmax_arrays(x.data, axes, temperature))


# ---------------------------------------------------------------------------
# group normalization


def _check_group_norm(x: Tensor, groups: int, gain: Tensor, shift: Tensor) -> None:
    _require_rank(x, 4, "group_norm input")
    channels = x.shape[1]
    if groups < 1 or channels % groups:
        raise ConfigError(f"{channels} channels not divisible by {groups} groups")
    _require_rank(gain, 1, "group_norm gain")
    _require_rank(shift, 1, "group_norm shift")
    _require_axis(gain, 0, channels, "group_norm gain")
    _require_axis(shift, 0, channels, "group_norm shift")
    _common_dtype(x, gain, shift)


def _group_norm_arrays(x, groups, gain, shift, eps):
    batch, channels = x.shape[0], x.shape[1]
    xg = x.reshape(batch, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(x.shape)
    out = xhat * gain.reshape(1, channels, 1, 1) + shift.reshape(1, channels, 1, 1)
    return out, xhat, inv


def _group_norm_grads(gout, xhat, inv, gain, groups):
    batch, channels = gout.shape[0], gout.shape[1]
    dgain = (gout * xhat).sum(axis=(0, 2, 3))
    dshift = gout.sum(axis=(0, 2, 3))
    gy = (gout * gain.reshape(1, channels, 1, 1)).reshape(batch, groups, -1)
    xh = xhat.reshape(batch, groups, -1)
    m1 = gy.mean(axis=2, keepdims=True)
    m2 = (gy * xh).mean(axis=2, keepdims=True)
    dx = ((gy - m1 - xh * m2) * inv).reshape(gout.shape)
    return dx, dgain, dshift


def group_norm(x: Tensor, groups: int, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    _check_group_norm(x, groups, gain, shift)
    out, _, _ = _group_norm_arrays(x.data, groups, gain.data, shift.data, eps)
    return Tensor._wrap(out)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def _sigmoid_arrays(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    return Tensor._wrap(_sigmoid_arrays(_as_tensor(x, "sigmoid input").data))


def _silu_arrays(x):
    s = _sigmoid_arrays(x)
    return x * s, s


def _silu_grads(gout, x, s):
    return gout * s * (1.0 + x * (1.0 - s))


def silu(x: Tensor) -> Tensor:
    out, _ = _silu_arrays(_as_tensor(x, "silu input").data)
    return Tensor._wrap(out)


def exp(x: Tensor) -> Tensor:
    return Tensor._wrap(np.exp(_as_tensor(x, "exp input").data))


# ---------------------------------------------------------------------------
# elementwise suite


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        for axis in range(min(a.rank, b.rank)):
            if a.shape[axis] != b.shape[axis]:
                raise ConfigError(
                    f"{op}: shapes {a.shape} and {b.shape} disagree first at axis {axis}"
                )
        raise ConfigError(f"{op}: shapes {a.shape} and {b.shape} have different rank")
    _common_dtype(a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return Tensor._wrap(a.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return Tensor._wrap(a.data - b.data)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return Tensor._wrap(a.data * b.data)


def scalar_mul(x: Tensor, scalar: float) -> Tensor:
    return Tensor._wrap(_as_tensor(x, "scalar_mul input").data * x.dtype.type(scalar))


def _check_broadcast_mul(x: Tensor, gate: Tensor) -> None:
    _require_rank(x, 4, "broadcast_mul input")
    _require_rank(gate, 4, "broadcast_mul gate")
    if gate.shape != (x.shape[0], x.shape[1], 1, 1):
        raise ConfigError(
            f"broadcast_mul gate shape {gate.shape}, expected ({x.shape[0]}, {x.shape[1]}, 1, 1)"
        )
    _common_dtype(x, gate)


def broadcast_mul(x: Tensor, gate: Tensor) -> Tensor:
    """Per-channel scaling: gate [B,C,1,1] stretched across the H, W plane."""
    _check_broadcast_mul(x, gate)
    return Tensor._wrap(x.data * gate.data)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(e) for e in shape)
    _check_rank_extents(shape)
    x = _as_tensor(x, "reshape input")
    if math.prod(shape) != x.size:
        raise ConfigError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    return Tensor._wrap(x.data.reshape(shape))


def fold_time(x: Tensor, mode: str) -> Tensor:
    """[B,T,C,H,W] -> [(B*T),C,H,W] (spatial) or [B,(T*C),H,W] (temporal).

    Pure metadata change over row-major data: element (b,t,c,h,w) lands at
    (b*T+t, c, h, w) respectively (b, t*C+c, h, w). Round trips via
    unfold_time are exact identities.
    """
    _require_rank(_as_tensor(x, "fold_time input"), 5, "fold_time input")
    b, t, c, h, w = x.shape
    if mode == "spatial":
        return reshape(x, (b * t, c, h, w))
    if mode == "temporal":
        return reshape(x, (b, t * c, h, w))
    raise ConfigError(f"fold_time mode must be 'spatial' or 'temporal', got {mode!r}")


def unfold_time(x: Tensor, mode: str, frames: int) -> Tensor:
    """Inverse of fold_time; `frames` is the T that was folded away."""
    _require_rank(_as_tensor(x, "unfold_time input"), 4, "unfold_time input")
    if frames < 1:
        raise ConfigError(f"frames must be positive, got {frames}")
    a0, a1, h, w = x.shape
    if mode == "spatial":
        if a0 % frames:
            raise ConfigError(f"axis 0 extent {a0} not divisible by frames {frames}")
        return reshape(x, (a0 // frames, frames, a1, h, w))
    if mode == "temporal":
        if a1 % frames:
            raise ConfigError(f"axis 1 extent {a1} not divisible by frames {frames}")
        return reshape(x, (a0, frames, a1 // frames, h, w))
    raise ConfigError(f"unfold_time mode must be 'spatial' or 'temporal', got {mode!r}")


# ---------------------------------------------------------------------------
# reductions


def _normalize_reduce_axes(t: Tensor, axes):
    if axes is None:
        return tuple(range(t.rank))
    return _check_axes(t, axes)


def _reduce_out(arr, keepdims):
    if not keepdims and arr.ndim == 0:
        arr = arr.reshape(1)
    return np.ascontiguousarray(arr)


def _reduce_expand(gout, in_shape, axes, keepdims):
    if not keepdims:
        shape = list(in_shape)
        for a in axes:
            shape[a] = 1
        # A full reduction without keepdims yields shape (1,); that already
        # broadcasts against any input shape only when rank matches, so
        # restore explicit 1-extents first.
        gout = gout.reshape(shape)
    return np.broadcast_to(gout, in_shape)


def reduce_sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x, "reduce_sum input")
    axes = _normalize_reduce_axes(x, axes)
    return Tensor._wrap(_reduce_out(x.data.sum(axis=axes, keepdims=keepdims), keepdims))


def reduce_mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x, "reduce_mean input")
    axes = _normalize_reduce_axes(x, axes)
    return Tensor._wrap(_reduce_out(x.data.mean(axis=axes, keepdims=keepdims), keepdims))


# ---------------------------------------------------------------------------
# sequence ops


def _check_time_diff(x: Tensor) -> None:
    if x.rank < 2:
        raise ConfigError(f"time_diff needs rank >= 2, got shape {x.shape}")
    if x.shape[1] < 2:
        raise ConfigError(f"time_diff needs at least 2 frames on axis 1, got {x.shape[1]}")


def _time_diff_arrays(x):
    return np.ascontiguousarray(x[:, 1:] - x[:, :-1])


def _time_diff_grads(gout, x_shape, dtype):
    gx = np.zeros(x_shape, dtype=dtype)
    gx[:, 1:] += gout
    gx[:, :-1] -= gout
    return gx


def time_diff(x: Tensor) -> Tensor:
    """Forward differences along axis 1: out[:, i] = x[:, i+1] - x[:, i]."""
    _check_time_diff(_as_tensor(x, "time_diff input"))
    return Tensor._wrap(_time_diff_arrays(x.data))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if not (lo <= hi):
        raise ConfigError(f"clamp bounds inverted: {lo} > {hi}")
    return Tensor._wrap(np.clip(_as_tensor(x, "clamp input").data, lo, hi))


# Every name here must have a backward rule registered in the autograd
# module; a completeness assertion there enforces it.
PRIMITIVES = {
    "conv2d": conv2d,
    "conv_transpose2d": conv_transpose2d,
    "linear": linear,
    "global_avg_pool": global_avg_pool,
    "softmax_over_axes": softmax_over_axes,
    "log_softmax_over_axes": log_softmax_over_axes,
    "group_norm": group_norm,
    "sigmoid": sigmoid,
    "silu": silu,
    "exp": exp,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar_mul": scalar_mul,
    "broadcast_mul": broadcast_mul,
    "reshape": reshape,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "time_diff": time_diff,
    "clamp": clamp,
}
