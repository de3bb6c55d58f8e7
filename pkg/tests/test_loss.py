"""Tests for stpl.loss: reconstruction term, motion divergence, invariants."""

import math

import numpy as np
import pytest

import oracles
import sweeps
import stpl.tensor as T
from stpl.autograd import Parameter, Tape, Variable, backward, finite_difference_check
from stpl.errors import ConfigError, NumericsError
from stpl.loss import LossConfig, ddr, forward_difference, total_loss
from stpl.rng import Stream
from stpl.tensor import Tensor

TEST_SEED_OFFSET = 0x7E57FACE


def random_seq(rng, shape, dtype=np.float64):
    flat = rng.doubles(int(np.prod(shape)))
    return Tensor._wrap(np.ascontiguousarray(flat.reshape(shape).astype(dtype)))


def dyadic_seq(rng, shape, scale=8):
    # integers / 2^scale: sums and differences of a few such values are
    # exact in binary floating point, so bitwise assertions are honest
    grid = np.array([rng.next_below(512) for _ in range(int(np.prod(shape)))],
                    dtype=np.float64)
    return Tensor._wrap((grid / float(2 ** scale)).reshape(shape))


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults():
    cfg = LossConfig()
    assert cfg.alpha == 0.1
    assert cfg.tau == 0.1
    assert cfg.ddr_enabled


@pytest.mark.parametrize("kwargs", [{"tau": 0.0}, {"tau": -1.0}, {"alpha": -0.1}])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ConfigError):
        LossConfig(**kwargs)


# ---------------------------------------------------------------------------
# forward differences


def test_forward_difference_matches_numpy():
    rng = Stream(TEST_SEED_OFFSET + 61)
    y = random_seq(rng, (2, 4, 1, 3, 3))
    got = forward_difference(y)
    assert np.array_equal(got.data, np.diff(y.data, axis=1))


def test_forward_difference_needs_two_frames():
    with pytest.raises(ConfigError):
        forward_difference(Tensor.zeros((2, 1, 1, 4, 4)))


# ---------------------------------------------------------------------------
# motion divergence invariants


def test_ddr_of_identical_sequences_is_zero():
    rng = Stream(TEST_SEED_OFFSET + 62)
    cfg = LossConfig()
    for dtype in (np.float32, np.float64):
        y = random_seq(rng, (2, 3, 1, 5, 5), dtype=dtype)
        val = float(ddr(y, y, cfg).data[0])
        assert val == 0.0  # p and q are computed identically, so KL is 0 - 0


def test_ddr_is_non_negative():
    rng = Stream(TEST_SEED_OFFSET + 63)
    cfg = LossConfig(tau=0.2)
    for _ in range(20):
        y_hat = random_seq(rng, (2, 3, 2, 4, 4))
        y = random_seq(rng, (2, 3, 2, 4, 4))
        assert float(ddr(y_hat, y, cfg).data[0]) >= -1e-6


def test_ddr_constant_motion_shift_is_exact():
    # Adding a per-frame constant (dyadic, so the additions are exact)
    # shifts every difference map by a constant; the temperature softmax
    # removes it and the divergence must not change even in the last bit.
    rng = Stream(TEST_SEED_OFFSET + 64)
    cfg = LossConfig(tau=0.25)
    y_hat = dyadic_seq(rng, (2, 4, 1, 4, 4))
    y = dyadic_seq(rng, (2, 4, 1, 4, 4))
    base = float(ddr(y_hat, y, cfg).data[0])

    shifts = np.array([0.0, 0.5, 1.25, 2.0]).reshape(1, 4, 1, 1, 1)
    shifted = Tensor._wrap(y_hat.data + shifts)
    assert float(ddr(shifted, y, cfg).data[0]) == base


def test_ddr_sees_where_motion_happens():
    # Same intensity change, different location: an impulse moving right
    # in the prediction but down in the target must be penalized.
    pred = np.zeros((1, 2, 1, 5, 5))
    target = np.zeros((1, 2, 1, 5, 5))
    pred[0, 0, 0, 2, 2] = target[0, 0, 0, 2, 2] = 1.0
    pred[0, 1, 0, 2, 3] = 1.0  # moved right
    target[0, 1, 0, 3, 2] = 1.0  # moved down
    val = float(ddr(Tensor._wrap(pred), Tensor._wrap(target), LossConfig()).data[0])
    assert val > 0.1


def test_ddr_constant_in_time_sequences_score_zero():
    rng = Stream(TEST_SEED_OFFSET + 65)
    frame_a = rng.doubles(9).reshape(1, 1, 1, 3, 3)
    frame_b = rng.doubles(9).reshape(1, 1, 1, 3, 3)
    y_hat = Tensor._wrap(np.ascontiguousarray(np.repeat(frame_a, 3, axis=1)))
    y = Tensor._wrap(np.ascontiguousarray(np.repeat(frame_b, 3, axis=1)))
    # all difference maps are zero, both soften to uniform maps, KL is 0
    assert float(ddr(y_hat, y, LossConfig()).data[0]) == 0.0


def test_ddr_matches_scalar_oracle_hand_case():
    # B=1, T'=2, C=1, H=W=2, worked with plain floats
    y_hat = np.array([[[[[0.1, 0.4], [0.3, 0.2]]],
                       [[[0.6, 0.1], [0.2, 0.5]]]]])
    y = np.array([[[[[0.2, 0.1], [0.4, 0.3]]],
                   [[[0.3, 0.6], [0.1, 0.2]]]]])
    tau = 0.5
    dp = (y_hat[0, 1, 0] - y_hat[0, 0, 0]).ravel()
    dq = (y[0, 1, 0] - y[0, 0, 0]).ravel()

    def log_probs(vals):
        m = max(vals)
        exps = [math.exp((v - m) / tau) for v in vals]
        z = math.fsum(exps)
        return [math.log(e / z) for e in exps]

    lp, lq = log_probs(list(dp)), log_probs(list(dq))
    want = math.fsum(math.exp(a) * (a - b) for a, b in zip(lp, lq))

    got = float(ddr(Tensor._wrap(y_hat), Tensor._wrap(y), LossConfig(tau=tau)).data[0])
    assert abs(got - want) <= 1e-6
    assert abs(got - oracles.ddr_oracle(y_hat, y, tau)) <= 1e-6


def test_ddr_randomized_sweep_matches_oracle():
    assert sweeps.ddr_sweep(25, seed=TEST_SEED_OFFSET + 66) <= 1e-6


def test_ddr_rejects_short_or_mismatched_sequences():
    cfg = LossConfig()
    with pytest.raises(ConfigError):
        ddr(Tensor.zeros((1, 1, 1, 4, 4)), Tensor.zeros((1, 1, 1, 4, 4)), cfg)
    with pytest.raises(ConfigError):
        ddr(Tensor.zeros((1, 2, 1, 4, 4)), Tensor.zeros((1, 2, 1, 5, 5)), cfg)
    with pytest.raises(ConfigError):
        ddr(Tensor.zeros((2, 4, 4)), Tensor.zeros((2, 4, 4)), cfg)


def test_ddr_rejects_non_finite_frames():
    bad = np.zeros((1, 2, 1, 3, 3))
    bad[0, 1, 0, 0, 0] = np.nan
    good = Tensor.zeros((1, 2, 1, 3, 3))
    with pytest.raises(NumericsError):
        ddr(Tensor._wrap(bad), good, LossConfig())
    with pytest.raises(NumericsError):
        ddr(good, Tensor._wrap(bad), LossConfig())


# ---------------------------------------------------------------------------
# total loss


def test_total_loss_of_identical_sequences_is_zero():
    rng = Stream(TEST_SEED_OFFSET + 67)
    y = random_seq(rng, (3, 4, 1, 6, 6))
    assert float(total_loss(y, y, LossConfig()).data[0]) == 0.0


def test_total_loss_alpha_zero_is_pure_reconstruction():
    rng = Stream(TEST_SEED_OFFSET + 68)
    y_hat = random_seq(rng, (2, 3, 2, 4, 4))
    y = random_seq(rng, (2, 3, 2, 4, 4))
    got = float(total_loss(y_hat, y, LossConfig(alpha=0.0)).data[0])

    # loop reference: mean squared error over B*C*H*W per frame, frame sum
    b, t, c, h, w = y_hat.shape
    per_frame = []
    for i in range(t):
        sq = [
            (float(y_hat.data[n, i, ch, r, col]) - float(y.data[n, i, ch, r, col])) ** 2
            for n in range(b) for ch in range(c) for r in range(h) for col in range(w)
        ]
        per_frame.append(math.fsum(sq) / (b * c * h * w))
    want = math.fsum(per_frame)
    assert abs(got - want) <= 1e-12
    assert abs(got - oracles.total_loss_oracle(y_hat.data, y.data, 0.0, 0.1)) <= 1e-12


def test_total_loss_is_affine_in_alpha():
    rng = Stream(TEST_SEED_OFFSET + 69)
    y_hat = random_seq(rng, (1, 3, 1, 4, 4))
    y = random_seq(rng, (1, 3, 1, 4, 4))

    def at(alpha):
        return float(total_loss(y_hat, y, LossConfig(alpha=alpha)).data[0])

    lo, mid, hi = at(0.1), at(0.2), at(0.3)
    assert hi > mid > lo  # divergence positive for unrelated sequences
    assert abs((hi - mid) - (mid - lo)) <= 1e-12


def test_total_loss_ddr_can_be_disabled():
    rng = Stream(TEST_SEED_OFFSET + 70)
    y_hat = random_seq(rng, (1, 3, 1, 4, 4))
    y = random_seq(rng, (1, 3, 1, 4, 4))
    off = float(total_loss(y_hat, y, LossConfig(ddr_enabled=False)).data[0])
    pure = float(total_loss(y_hat, y, LossConfig(alpha=0.0)).data[0])
    assert off == pure


def test_total_loss_single_frame_skips_divergence():
    rng = Stream(TEST_SEED_OFFSET + 71)
    y_hat = random_seq(rng, (2, 1, 1, 4, 4))
    y = random_seq(rng, (2, 1, 1, 4, 4))
    got = float(total_loss(y_hat, y, LossConfig()).data[0])
    want = oracles.total_loss_oracle(y_hat.data, y.data, 0.0, 0.1)
    assert abs(got - want) <= 1e-12


def test_total_loss_matches_oracle_randomized():
    rng = Stream(TEST_SEED_OFFSET + 72)
    worst = 0.0
    for _ in range(15):
        shape = (1 + rng.next_below(2), 2 + rng.next_below(3),
                 1 + rng.next_below(2), 2 + rng.next_below(4), 2 + rng.next_below(4))
        y_hat = random_seq(rng, shape)
        y = random_seq(rng, shape)
        alpha = 0.05 + 0.5 * rng.next_double()
        tau = 0.1 + rng.next_double()
        got = float(total_loss(y_hat, y, LossConfig(alpha=alpha, tau=tau)).data[0])
        want = oracles.total_loss_oracle(y_hat.data, y.data, alpha, tau)
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    assert worst <= 1e-9


def test_total_loss_shape_mismatch_and_non_finite():
    with pytest.raises(ConfigError):
        total_loss(Tensor.zeros((1, 2, 1, 4, 4)), Tensor.zeros((1, 2, 1, 4, 5)),
                   LossConfig())
    bad = np.zeros((1, 2, 1, 3, 3))
    bad[0, 0, 0, 1, 1] = np.inf
    with pytest.raises(NumericsError):
        total_loss(Tensor._wrap(bad), Tensor.zeros((1, 2, 1, 3, 3), dtype=np.float64),
                   LossConfig())


def test_total_loss_type_follows_input():
    rng = Stream(TEST_SEED_OFFSET + 73)
    y_hat = random_seq(rng, (1, 2, 1, 3, 3))
    y = random_seq(rng, (1, 2, 1, 3, 3))
    assert isinstance(total_loss(y_hat, y, LossConfig()), Tensor)
    tape = Tape()
    p = Parameter("pred", y_hat)
    out = total_loss(tape.watch(p), y, LossConfig())
    assert isinstance(out, Variable)


# ---------------------------------------------------------------------------
# gradients


def test_total_loss_gradient_matches_finite_differences():
    rng = Stream(TEST_SEED_OFFSET + 74)
    y = random_seq(rng, (1, 3, 1, 4, 4))
    p = Parameter("pred", random_seq(rng, (1, 3, 1, 4, 4)))

    def loss_fn(tape):
        return total_loss(tape.watch(p), y, LossConfig(alpha=0.1, tau=0.1))

    report = finite_difference_check(
        loss_fn, [p], step=1e-5, tolerance=1e-4, max_samples=48,
        seed=TEST_SEED_OFFSET + 74,
    )
    assert report.passed, report.summary()


def test_ddr_gradient_matches_finite_differences():
    rng = Stream(TEST_SEED_OFFSET + 75)
    y = random_seq(rng, (2, 3, 1, 3, 3))
    p = Parameter("pred", random_seq(rng, (2, 3, 1, 3, 3)))

    def loss_fn(tape):
        return ddr(tape.watch(p), y, LossConfig(tau=0.3))

    report = finite_difference_check(
        loss_fn, [p], step=1e-5, tolerance=1e-4, max_samples=48,
        seed=TEST_SEED_OFFSET + 75,
    )
    assert report.passed, report.summary()


def test_gradient_vanishes_at_perfect_prediction():
    # Both terms are minimized at y_hat == y, so the gradient there is zero.
    rng = Stream(TEST_SEED_OFFSET + 76)
    y = random_seq(rng, (1, 3, 1, 4, 4))
    p = Parameter("pred", Tensor._wrap(y.data.copy()))
    tape = Tape()
    loss = total_loss(tape.watch(p), y, LossConfig())
    backward(tape, loss)
    assert np.max(np.abs(p.grad.data)) <= 1e-12
