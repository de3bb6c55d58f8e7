"""Training objective: per-pixel reconstruction plus a motion-distribution
regularizer.

The regularizer turns consecutive-frame differences into probability maps
(temperature softmax over each difference image) and penalizes the KL
divergence of the predicted map from the target map, so the model is graded
on where motion happens, not only on per-pixel intensity.

Every function accepts the prediction either as a plain Tensor (returns a
Tensor) or as a taped Variable (returns a Variable for backward). Targets are
always treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import tensor as T
from .autograd import Variable
from .errors import ConfigError, NumericsError
from .tensor import Tensor

_JOINT_AXES = (2, 3, 4)  # channel and spatial axes of [B, T', C, H, W]


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    tau: float = 0.1
    ddr_enabled: bool = True

    def __post_init__(self):
        if not (self.tau > 0.0):
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")


def _check_sequence(name: str, t: Tensor, min_frames: int) -> None:
    if t.rank != 5:
        raise ConfigError(f"{name} must be [B, T', C, H, W], got shape {t.shape}")
    if t.shape[1] < min_frames:
        raise ConfigError(
            f"{name} has {t.shape[1]} frames; at least {min_frames} needed "
            "(frame differences are undefined otherwise)"
        )


def _check_finite(name: str, t: Tensor) -> None:
    if not np.isfinite(t.data).all():
        raise NumericsError(f"{name} contains non-finite values")


def _split(y_hat):
    """(Variable view of the prediction, whether the caller passed one)."""
    if isinstance(y_hat, Variable):
        return y_hat, True
    return Variable.constant(y_hat), False


def _target_tensor(y) -> Tensor:
    return y.value if isinstance(y, Variable) else y


def forward_difference(y: Tensor) -> Tensor:
    """Consecutive-frame differences: out[:, i] = y[:, i+1] - y[:, i]."""
    _check_sequence("sequence", y, 2)
    return T.time_diff(y)


def ddr(y_hat, y, cfg: LossConfig):
    """Motion-distribution divergence, summed over frame pairs, batch mean."""
    yv, taped = _split(y_hat)
    yt = _target_tensor(y)
    _check_sequence("prediction", yv.value, 2)
    _check_sequence("target", yt, 2)
    if yv.value.shape != yt.shape:
        raise ConfigError(f"shape mismatch: prediction {yv.value.shape} vs target {yt.shape}")
    _check_finite("prediction", yv.value)
    _check_finite("target", yt)

    diff = ag.time_diff(yv)
    p = ag.softmax_over_axes(diff, _JOINT_AXES, cfg.tau)
    log_p = ag.log_softmax_over_axes(diff, _JOINT_AXES, cfg.tau)
    log_q = T.log_softmax_over_axes(T.time_diff(yt), _JOINT_AXES, cfg.tau)
    kl = ag.mul(p, ag.sub(log_p, Variable.constant(log_q)))
    per_pair = ag.reduce_sum(kl, axes=_JOINT_AXES)
    per_sample = ag.reduce_sum(per_pair, axes=(1,))
    out = ag.reduce_mean(per_sample)
    return out if taped else out.value


def total_loss(y_hat, y, cfg: LossConfig):
    """Reconstruction (pixel mean per frame, summed over frames) plus
    alpha times the motion divergence when enabled and applicable."""
    yv, taped = _split(y_hat)
    yt = _target_tensor(y)
    _check_sequence("prediction", yv.value, 1)
    if yv.value.shape != yt.shape:
        raise ConfigError(f"shape mismatch: prediction {yv.value.shape} vs target {yt.shape}")

    diff = ag.sub(yv, Variable.constant(yt))
    per_frame = ag.reduce_mean(ag.mul(diff, diff), axes=(0, 2, 3, 4))
    loss = ag.reduce_sum(per_frame)
    if cfg.ddr_enabled and yv.value.shape[1] >= 2 and cfg.alpha != 0.0:
        loss = ag.add(loss, ag.scalar_mul(ddr(yv, yt, cfg), cfg.alpha))
    if not np.isfinite(loss.value.data).all():
        raise NumericsError("loss is non-finite")
    return loss if taped else loss.value
