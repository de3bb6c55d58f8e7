"""Tensor value type and forward kernels against closed forms and oracles."""

import math

import numpy as np
import pytest

from stpl import tensor as T
from stpl.errors import ConfigError
from stpl.tensor import ConvSpec, Tensor, depthwise_spec, pointwise_spec

import oracles
import sweeps


def dyadic(rng, shape, scale=8):
    """Random values on a 2^-scale grid: sums/differences are exact in f64."""
    return rng.integers(-(2 ** scale), 2 ** scale, size=shape).astype(np.float64) / (2.0 ** scale)


# ---------------------------------------------------------------------------
# Tensor type


def test_tensor_basics():
    t = Tensor([1.0, 2.0, 3.0])
    assert t.shape == (3,) and t.dtype == np.float32
    assert Tensor(np.zeros((2, 2), dtype=np.float64)).dtype == np.float64
    assert Tensor.scalar(4.0).item() == 4.0
    assert Tensor.zeros((2, 3)).data.sum() == 0.0
    assert Tensor.full((2, 2), 7.0).data.mean() == 7.0


def test_tensor_rank_and_extent_validation():
    with pytest.raises(ConfigError):
        Tensor(np.zeros((1, 1, 1, 1, 1, 1)))
    with pytest.raises(ConfigError):
        Tensor.zeros((2, 0, 3))
    with pytest.raises(ConfigError):
        Tensor([[1.0], [2.0]]).item()


def test_convspec_validation():
    with pytest.raises(ConfigError):
        ConvSpec(3, 4, 3, 3, groups=2)  # in_channels not divisible
    with pytest.raises(ConfigError):
        ConvSpec(4, 4, 3, 3, stride=0)
    with pytest.raises(ConfigError):
        ConvSpec(4, 4, 3, 3, padding=-1)
    dw = depthwise_spec(6, 3, dilation=2)
    assert dw.groups == dw.in_channels == dw.out_channels == 6
    assert dw.padding == 2
    pw = pointwise_spec(3, 5)
    assert (pw.kernel_h, pw.kernel_w, pw.groups) == (1, 1, 1)
    with pytest.raises(ConfigError):
        depthwise_spec(4, 4)  # even kernel cannot same-pad


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_identity_pointwise():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor.zeros((3,)), pointwise_spec(3, 3))
    assert np.array_equal(out.data, x)


def test_conv2d_depthwise_delta():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 4, 5, 5)).astype(np.float32)
    w = np.zeros((4, 1, 3, 3), dtype=np.float32)
    w[:, 0, 1, 1] = 1.0
    out = T.conv2d(Tensor(x), Tensor(w), Tensor.zeros((4,)), depthwise_spec(4, 3))
    assert np.array_equal(out.data, x)


def test_conv2d_dilated_case_vs_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
    w = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    spec = ConvSpec(3, 2, 3, 3, stride=1, padding=1, dilation=2)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), spec)
    want = oracles.conv2d_oracle(x, w, b, stride=1, padding=1, dilation=2)
    assert out.shape == want.shape
    assert float(np.max(np.abs(out.data - want))) <= 1e-5


def test_conv2d_randomized_oracle_sweep():
    assert sweeps.conv2d_sweep(60, seed=101) <= 1e-5


def test_conv2d_shape_formula():
    rng = np.random.default_rng(3)
    for _ in range(25):
        geo = sweeps._conv_geometry(rng, transpose=False)
        if geo is None:
            continue
        groups, cpg, copg, kh, kw, stride, padding, dilation, h, w = geo
        spec = ConvSpec(groups * cpg, groups * copg, kh, kw, stride=stride,
                        padding=padding, dilation=dilation, groups=groups)
        x = Tensor.zeros((1, groups * cpg, h, w))
        wt = Tensor.zeros((groups * copg, cpg, kh, kw))
        out = T.conv2d(x, wt, Tensor.zeros((groups * copg,)), spec)
        ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
        wo = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
        assert out.shape == (1, groups * copg, ho, wo)


def test_conv2d_errors():
    spec = ConvSpec(3, 2, 3, 3)
    with pytest.raises(ConfigError, match="weight"):
        T.conv2d(Tensor.zeros((1, 3, 5, 5)), Tensor.zeros((2, 2, 3, 3)),
                 Tensor.zeros((2,)), spec)
    # non-integral output extent: H=5, k=2, stride 2 -> (5-2)/2+1 not integral
    bad = ConvSpec(1, 1, 2, 2, stride=2)
    with pytest.raises(ConfigError):
        T.conv2d(Tensor.zeros((1, 1, 5, 5)), Tensor.zeros((1, 1, 2, 2)),
                 Tensor.zeros((1,)), bad)


def test_conv2d_purity():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((2, 4, 6, 6)).astype(np.float32))
    w = Tensor(rng.standard_normal((4, 4, 3, 3)).astype(np.float32))
    b = Tensor(rng.standard_normal(4).astype(np.float32))
    spec = ConvSpec(4, 4, 3, 3, padding=1)
    a = T.conv2d(x, w, b, spec)
    assert np.array_equal(a.data, T.conv2d(x, w, b, spec).data)


# ---------------------------------------------------------------------------
# conv_transpose2d


def test_conv_transpose_identity():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
    spec = pointwise_spec(3, 3)
    out = T.conv_transpose2d(Tensor(x), Tensor(w), Tensor.zeros((3,)), spec)
    assert np.array_equal(out.data, x)


def test_conv_transpose_single_tap_expansion():
    v = 3.25
    x = Tensor(np.full((1, 1, 1, 1), v, dtype=np.float32))
    w = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32))
    spec = ConvSpec(1, 1, 2, 2, stride=2)
    out = T.conv_transpose2d(x, w, Tensor.zeros((1,)), spec)
    assert out.shape == (1, 1, 2, 2)
    assert np.array_equal(out.data, np.full((1, 1, 2, 2), v, dtype=np.float32))


def test_conv_transpose_randomized_oracle_sweep():
    assert sweeps.conv_transpose2d_sweep(60, seed=102) <= 1e-5


def test_conv_transpose_shape_formula():
    # H' = (H-1)*stride - 2*padding + dilation*(kh-1) + 1
    x = Tensor.zeros((1, 2, 5, 7))
    w = Tensor.zeros((2, 3, 4, 3))
    spec = ConvSpec(2, 3, 4, 3, stride=2, padding=1)
    out = T.conv_transpose2d(x, w, Tensor.zeros((3,)), spec)
    assert out.shape == (1, 3, (5 - 1) * 2 - 2 + 4, (7 - 1) * 2 - 2 + 3)


# ---------------------------------------------------------------------------
# global_avg_pool


def test_gap_constant_and_closed_form():
    out = T.global_avg_pool(Tensor.full((2, 3, 4, 5), 2.5))
    assert out.shape == (2, 3, 1, 1)
    assert np.array_equal(out.data, np.full((2, 3, 1, 1), 2.5, dtype=np.float32))
    quad = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
    assert T.global_avg_pool(quad).data.reshape(-1)[0] == 2.5


def test_gap_exact_vs_loop_oracle_on_dyadic_grid():
    # Dyadic values with a power-of-two plane size: every summation order
    # yields the same exact result, so equality is bitwise.
    rng = np.random.default_rng(6)
    x = dyadic(rng, (3, 5, 4, 8))
    got = T.global_avg_pool(Tensor(x)).data
    want = oracles.gap_oracle(x)
    assert np.array_equal(got, want)


def test_gap_random_f64_close():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 7, 5))
    got = T.global_avg_pool(Tensor(x)).data
    assert float(np.max(np.abs(got - oracles.gap_oracle(x)))) <= 1e-12


# ---------------------------------------------------------------------------
# linear


def test_linear_identity_and_hand_case():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((3, 4)).astype(np.float32)
    eye = Tensor(np.eye(4, dtype=np.float32))
    assert np.array_equal(T.linear(Tensor(x), eye, Tensor.zeros((4,))).data, x)
    out = T.linear(Tensor(np.array([[3.0, 1.0]], dtype=np.float32)),
                   Tensor(np.array([[1.0, -1.0]], dtype=np.float32)),
                   Tensor(np.array([0.5], dtype=np.float32)))
    assert np.array_equal(out.data, np.array([[2.5]], dtype=np.float32))


def test_linear_randomized_oracle_sweep():
    assert sweeps.linear_sweep(60, seed=103) <= 1e-5


def test_linear_shape_errors():
    with pytest.raises(ConfigError):
        T.linear(Tensor.zeros((2, 3)), Tensor.zeros((4, 5)), Tensor.zeros((4,)))
    with pytest.raises(ConfigError):
        T.linear(Tensor.zeros((2, 3)), Tensor.zeros((4, 3)), Tensor.zeros((5,)))


# ---------------------------------------------------------------------------
# softmax family


def test_softmax_constant_slice_uniform():
    x = Tensor.full((2, 3, 4), 1.7)
    out = T.softmax_over_axes(x, (1, 2), 0.3)
    assert np.allclose(out.data, 1.0 / 12.0, atol=1e-7)


def test_softmax_two_element_closed_form():
    x = Tensor(np.array([[0.0, math.log(3.0)]]))
    out = T.softmax_over_axes(x, (1,), 1.0)
    assert np.max(np.abs(out.data - np.array([[0.25, 0.75]]))) <= 1e-12


def test_softmax_small_slice_vs_64bit_oracle():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((1, 1, 2, 2))
    got = T.softmax_over_axes(Tensor(x), (2, 3), 0.1).data
    want = oracles.softmax_oracle(x, (2, 3), 0.1)
    assert float(np.max(np.abs(got - want))) <= 1e-6


def test_softmax_randomized_oracle_sweep():
    assert sweeps.softmax_sweep(60, seed=104) <= 1e-6


def test_softmax_slices_sum_to_one():
    rng = np.random.default_rng(10)
    for _ in range(20):
        rank = int(rng.integers(2, 5))
        shape = tuple(int(rng.integers(1, 6)) for _ in range(rank))
        n_axes = int(rng.integers(1, rank))
        axes = tuple(sorted(rng.choice(rank, size=n_axes, replace=False).tolist()))
        out = T.softmax_over_axes(Tensor(rng.standard_normal(shape) * 5), axes, 0.1)
        sums = out.data.sum(axis=axes)
        assert float(np.max(np.abs(sums - 1.0))) <= 1e-6


def test_softmax_shift_invariance_bitwise():
    # Values on a dyadic grid plus a power-of-two shift: x + c is exact, so
    # max-subtraction cancels the shift bit-for-bit.
    rng = np.random.default_rng(11)
    x = dyadic(rng, (3, 4, 4))
    shifted = x + 4.0
    a = T.softmax_over_axes(Tensor(x), (1, 2), 0.1).data
    b = T.softmax_over_axes(Tensor(shifted), (1, 2), 0.1).data
    assert np.array_equal(a, b)


def test_log_softmax_consistent_with_softmax():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 3, 5))
    p = T.softmax_over_axes(Tensor(x), (1, 2), 0.5).data
    lp = T.log_softmax_over_axes(Tensor(x), (1, 2), 0.5).data
    assert float(np.max(np.abs(np.exp(lp) - p))) <= 1e-12
    assert float(np.max(lp)) <= 0.0


def test_softmax_temperature_validation():
    x = Tensor.zeros((2, 2))
    for bad in (0.0, -1.0):
        with pytest.raises(ConfigError):
            T.softmax_over_axes(x, (1,), bad)
        with pytest.raises(ConfigError):
            T.log_softmax_over_axes(x, (1,), bad)
    with pytest.raises(ConfigError):
        T.softmax_over_axes(x, (), 1.0)
    with pytest.raises(ConfigError):
        T.softmax_over_axes(x, (0, 0), 1.0)
    with pytest.raises(ConfigError):
        T.softmax_over_axes(x, (2,), 1.0)


# ---------------------------------------------------------------------------
# elementwise suite


def test_elementwise_ops():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((2, 3, 4)).astype(np.float32)
    b = rng.standard_normal((2, 3, 4)).astype(np.float32)
    assert np.array_equal(T.add(Tensor(a), Tensor(b)).data, a + b)
    assert np.array_equal(T.sub(Tensor(a), Tensor(b)).data, a - b)
    assert np.array_equal(T.mul(Tensor(a), Tensor(b)).data, a * b)
    assert np.array_equal(T.scalar_mul(Tensor(a), -1.5).data,
                          a * np.float32(-1.5))
    with pytest.raises(ConfigError):
        T.add(Tensor.zeros((2, 3)), Tensor.zeros((3, 2)))


def test_broadcast_mul_neutral_and_tiling():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
    ones = Tensor(np.ones((2, 3, 1, 1), dtype=np.float32))
    assert np.array_equal(T.broadcast_mul(Tensor(x), ones).data, x)

    plane = T.broadcast_mul(Tensor(np.ones((1, 1, 2, 2), dtype=np.float32)),
                            Tensor(np.full((1, 1, 1, 1), 2.0, dtype=np.float32)))
    assert np.array_equal(plane.data, np.full((1, 1, 2, 2), 2.0, dtype=np.float32))

    gate = rng.standard_normal((2, 3, 1, 1)).astype(np.float32)
    got = T.broadcast_mul(Tensor(x), Tensor(gate)).data
    tiled = np.tile(gate, (1, 1, 4, 5))
    assert np.array_equal(got, x * tiled)

    with pytest.raises(ConfigError):
        T.broadcast_mul(Tensor(x), Tensor.zeros((2, 2, 1, 1)))


# ---------------------------------------------------------------------------
# reshape / fold_time


def test_fold_time_round_trips():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((2, 3, 4, 5, 6)).astype(np.float32)
    for mode in ("spatial", "temporal"):
        folded = T.fold_time(Tensor(x), mode)
        back = T.unfold_time(folded, mode, frames=3)
        assert np.array_equal(back.data, x)
    assert T.fold_time(Tensor(x), "spatial").shape == (6, 4, 5, 6)
    assert T.fold_time(Tensor(x), "temporal").shape == (2, 12, 5, 6)
    with pytest.raises(ConfigError):
        T.fold_time(Tensor(x), "diagonal")


def test_fold_time_temporal_ordering():
    # B=1, T=2, C=1: frame 0's channel must precede frame 1's.
    x = np.zeros((1, 2, 1, 2, 2), dtype=np.float32)
    x[0, 0] = 1.0
    x[0, 1] = 2.0
    folded = T.fold_time(Tensor(x), "temporal").data
    assert np.all(folded[0, 0] == 1.0) and np.all(folded[0, 1] == 2.0)


def test_fold_time_spatial_index_oracle():
    b_n, t_n, c_n = 2, 3, 4
    x = np.arange(b_n * t_n * c_n * 2 * 2, dtype=np.float32).reshape(b_n, t_n, c_n, 2, 2)
    folded = T.fold_time(Tensor(x), "spatial").data
    for b in range(b_n):
        for t in range(t_n):
            for c in range(c_n):
                assert np.array_equal(folded[b * t_n + t, c], x[b, t, c])


def test_reshape():
    x = Tensor(np.arange(12, dtype=np.float32).reshape(3, 4))
    assert T.reshape(x, (2, 6)).shape == (2, 6)
    assert np.array_equal(T.reshape(x, (12,)).data, np.arange(12, dtype=np.float32))
    with pytest.raises(ConfigError):
        T.reshape(x, (5, 3))


# ---------------------------------------------------------------------------
# group_norm


def test_group_norm_constant_input_zeros():
    x = Tensor.full((2, 4, 3, 3), 5.0)
    out = T.group_norm(x, 2, Tensor(np.ones(4, dtype=np.float32)),
                       Tensor.zeros((4,)))
    assert float(np.max(np.abs(out.data))) <= 1e-5


def test_group_norm_zero_gain_gives_shift():
    rng = np.random.default_rng(16)
    x = Tensor(rng.standard_normal((1, 4, 2, 2)).astype(np.float32))
    shift = np.array([1.0, -2.0, 0.5, 3.0], dtype=np.float32)
    out = T.group_norm(x, 4, Tensor.zeros((4,)), Tensor(shift))
    for c in range(4):
        assert np.array_equal(out.data[0, c], np.full((2, 2), shift[c], dtype=np.float32))


def test_group_norm_randomized_oracle_sweep():
    assert sweeps.group_norm_sweep(60, seed=105) <= 1e-5


def test_group_norm_group_mean_near_zero():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((2, 6, 4, 4))
    out = T.group_norm(Tensor(x), 3, Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    per_group = out.reshape(2, 3, 2, 4, 4).mean(axis=(2, 3, 4))
    assert float(np.max(np.abs(per_group))) <= 1e-5


def test_group_norm_divisibility_error():
    with pytest.raises(ConfigError):
        T.group_norm(Tensor.zeros((1, 5, 2, 2)), 2,
                     Tensor(np.ones(5, dtype=np.float32)), Tensor.zeros((5,)))


# ---------------------------------------------------------------------------
# remaining pointwise ops


def test_sigmoid_silu_exp():
    rng = np.random.default_rng(18)
    x = rng.standard_normal((3, 4))
    s = T.sigmoid(Tensor(x)).data
    assert float(np.max(np.abs(s - 1.0 / (1.0 + np.exp(-x))))) <= 1e-12
    silu = T.silu(Tensor(x)).data
    assert float(np.max(np.abs(silu - x * s))) <= 1e-12
    assert float(np.max(np.abs(T.exp(Tensor(x)).data - np.exp(x)))) <= 1e-12


def test_clamp_and_time_diff():
    x = np.array([[-1.0, 0.5, 2.0]], dtype=np.float32)
    assert np.array_equal(T.clamp(Tensor(x), 0.0, 1.0).data,
                          np.array([[0.0, 0.5, 1.0]], dtype=np.float32))
    rng = np.random.default_rng(19)
    seq = rng.standard_normal((2, 4, 1, 3, 3)).astype(np.float32)
    got = T.time_diff(Tensor(seq)).data
    assert got.shape == (2, 3, 1, 3, 3)
    assert np.array_equal(got, np.diff(seq, axis=1))
    with pytest.raises(ConfigError):
        T.time_diff(Tensor.zeros((2, 1, 1, 3, 3)))


def test_reductions_match_numpy_f64():
    rng = np.random.default_rng(20)
    x = rng.standard_normal((3, 4, 5))
    assert np.allclose(T.reduce_sum(Tensor(x), axes=(1,)).data,
                       x.sum(axis=1), atol=1e-12)
    assert np.allclose(T.reduce_mean(Tensor(x), axes=(0, 2)).data,
                       x.mean(axis=(0, 2)), atol=1e-12)
    total = T.reduce_sum(Tensor(x))
    assert total.shape == (1,)
    assert abs(total.item() - float(x.sum())) <= 1e-10
    kept = T.reduce_sum(Tensor(x), axes=(1,), keepdims=True)
    assert kept.shape == (3, 1, 5)
