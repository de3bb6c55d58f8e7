"""The video predictor: spatial encoder, temporal attention stack, decoder.

Frames are folded into the batch axis for the spatial halves (so convolutions
see single frames) and into the channel axis for the temporal stack (so frame
order lives on channels and needs no recurrence). Each temporal block splits
into a spatial-attention branch (depthwise conv, dilated depthwise conv, then
1x1) and a channel-gate branch (squeeze-excitation with a sigmoid), combined
multiplicatively and wrapped in an additive residual. Ablation switches
physically omit the disabled branch's parameters.

All weights are drawn from per-tensor child streams of one seed, so identical
(config, seed) pairs build bitwise-identical models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import tensor as T
from .autograd import Parameter, Tape, Variable
from .errors import ConfigError
from .rng import Stream
from .tensor import ConvSpec, Tensor, depthwise_spec, pointwise_spec

ABLATIONS = ("full", "conv_baseline", "no_sa", "no_da")

_NORM_EPS = 1e-5

_ENCODER_STRIDES = {1: (1, 1, 1, 1), 2: (1, 2, 1, 1), 4: (1, 2, 1, 2)}


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    frames_in: int = 10
    frames_out: int = 10
    hidden_spatial: int = 32
    hidden_temporal: int = 64
    num_tau_blocks: int = 4
    dw_kernel: int = 5
    dwd_kernel: int = 7
    dwd_dilation: int = 3
    se_reduction: int = 4
    downsample_factor: int = 4
    ablation: str = "full"
    norm_groups: int = 8

    def __post_init__(self):
        positive = (
            "in_channels", "frames_in", "frames_out", "hidden_spatial", "hidden_temporal",
            "num_tau_blocks", "dw_kernel", "dwd_kernel", "dwd_dilation", "se_reduction",
            "norm_groups",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.frames_in != self.frames_out:
            raise ConfigError(
                f"the feed-forward core needs frames_in == frames_out "
                f"(got {self.frames_in} and {self.frames_out}); longer horizons "
                "go through the recursive predictor"
            )
        if self.dw_kernel % 2 == 0 or self.dwd_kernel % 2 == 0:
            raise ConfigError("dw_kernel and dwd_kernel must be odd (same-padding)")
        if self.downsample_factor not in _ENCODER_STRIDES:
            raise ConfigError(
                f"downsample_factor must be one of {sorted(_ENCODER_STRIDES)}, "
                f"got {self.downsample_factor}"
            )
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    @property
    def temporal_channels(self) -> int:
        return self.frames_in * self.hidden_temporal

    @property
    def se_bottleneck(self) -> int:
        return max(1, self.temporal_channels // self.se_reduction)

    @property
    def encoder_strides(self) -> tuple:
        return _ENCODER_STRIDES[self.downsample_factor]

    @property
    def decoder_strides(self) -> tuple:
        return tuple(reversed(self.encoder_strides))


def _norm_group_count(requested: int, channels: int) -> int:
    # Largest group count <= requested that divides the channel count, so
    # small toy widths stay valid under the divisibility precondition.
    return math.gcd(requested, channels)


class _ParamBank:
    """Creates parameters with stable ids and per-tensor init streams."""

    def __init__(self, seed: int, dtype):
        self.root = Stream(seed)
        self.dtype = dtype
        self.index = 0
        self.params: dict[str, Parameter] = {}

    def _register(self, param: Parameter) -> Parameter:
        if param.id in self.params:
            raise ConfigError(f"duplicate parameter id {param.id!r}")
        self.params[param.id] = param
        return param

    def uniform(self, pid: str, shape, fan_in: int) -> Parameter:
        stream = self.root.child(self.index)
        self.index += 1
        bound = 1.0 / math.sqrt(fan_in)
        size = math.prod(shape)
        vals = (stream.doubles(size) * 2.0 - 1.0) * bound
        arr = np.ascontiguousarray(vals.reshape(shape).astype(self.dtype))
        return self._register(Parameter(pid, Tensor._wrap(arr)))

    def constant(self, pid: str, shape, value: float) -> Parameter:
        self.index += 1  # keep stream indices aligned across param kinds
        return self._register(Parameter(pid, Tensor.full(shape, value, dtype=self.dtype)))


class _Conv:
    """Conv layer; bias=False for layers feeding a norm, where an additive
    constant is removed by the per-group standardization anyway."""

    def __init__(self, bank: _ParamBank, prefix: str, spec: ConvSpec, bias: bool = True):
        self.spec = spec
        fan_in = (spec.in_channels // spec.groups) * spec.kernel_h * spec.kernel_w
        shape = (spec.out_channels, spec.in_channels // spec.groups, spec.kernel_h, spec.kernel_w)
        self.weight = bank.uniform(f"{prefix}.weight", shape, fan_in)
        self.bias = bank.constant(f"{prefix}.bias", (spec.out_channels,), 0.0) if bias else None

    def _bias_arg(self, tape: Tape, v: Variable):
        if self.bias is None:
            return Tensor.zeros((self.spec.out_channels,), dtype=v.value.dtype)
        return tape.watch(self.bias)

    def __call__(self, tape: Tape, v: Variable) -> Variable:
        return ag.conv2d(v, tape.watch(self.weight), self._bias_arg(tape, v), self.spec)


class _ConvTranspose:
    def __init__(self, bank: _ParamBank, prefix: str, spec: ConvSpec, bias: bool = True):
        self.spec = spec
        fan_in = (spec.in_channels // spec.groups) * spec.kernel_h * spec.kernel_w
        shape = (spec.in_channels, spec.out_channels // spec.groups, spec.kernel_h, spec.kernel_w)
        self.weight = bank.uniform(f"{prefix}.weight", shape, fan_in)
        self.bias = bank.constant(f"{prefix}.bias", (spec.out_channels,), 0.0) if bias else None

    def _bias_arg(self, tape: Tape, v: Variable):
        if self.bias is None:
            return Tensor.zeros((self.spec.out_channels,), dtype=v.value.dtype)
        return tape.watch(self.bias)

    def __call__(self, tape: Tape, v: Variable) -> Variable:
        return ag.conv_transpose2d(v, tape.watch(self.weight), self._bias_arg(tape, v), self.spec)


class _Linear:
    def __init__(self, bank: _ParamBank, prefix: str, n_in: int, n_out: int):
        self.weight = bank.uniform(f"{prefix}.weight", (n_out, n_in), n_in)
        self.bias = bank.constant(f"{prefix}.bias", (n_out,), 0.0)

    def __call__(self, tape: Tape, v: Variable) -> Variable:
        return ag.linear(v, tape.watch(self.weight), tape.watch(self.bias))


class _Norm:
    def __init__(self, bank: _ParamBank, prefix: str, channels: int, requested_groups: int):
        self.groups = _norm_group_count(requested_groups, channels)
        self.gain = bank.constant(f"{prefix}.gain", (channels,), 1.0)
        self.shift = bank.constant(f"{prefix}.shift", (channels,), 0.0)

    def __call__(self, tape: Tape, v: Variable) -> Variable:
        return ag.group_norm(v, self.groups, tape.watch(self.gain), tape.watch(self.shift), _NORM_EPS)


class TemporalAttentionBlock:
    """One temporal stage over [B, channels, H, W] with folded frame-channels.

    Variants: the full block gates h by spatial attention times the channel
    gate and adds the residual; no_sa / no_da replace the corresponding
    factor with ones (and create no parameters for it); conv_baseline swaps
    the whole block for a plain 3x3 conv -> norm -> nonlinearity stage.
    """

    def __init__(
        self,
        bank: _ParamBank,
        prefix: str,
        channels: int,
        *,
        dw_kernel: int = 5,
        dwd_kernel: int = 7,
        dwd_dilation: int = 3,
        se_reduction: int = 4,
        norm_groups: int = 8,
        ablation: str = "full",
    ):
        if ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {ablation!r}")
        self.channels = channels
        self.baseline = ablation == "conv_baseline"
        self.use_sa = ablation in ("full", "no_da") and not self.baseline
        self.use_da = ablation in ("full", "no_sa") and not self.baseline
        if self.baseline:
            spec = ConvSpec(channels, channels, 3, 3, padding=1)
            self.conv = _Conv(bank, f"{prefix}.conv", spec, bias=False)
            self.norm = _Norm(bank, f"{prefix}.norm", channels, norm_groups)
            return
        if self.use_sa:
            self.norm = _Norm(bank, f"{prefix}.norm", channels, norm_groups)
            self.dw = _Conv(bank, f"{prefix}.dw", depthwise_spec(channels, dw_kernel))
            self.dwd = _Conv(bank, f"{prefix}.dwd", depthwise_spec(channels, dwd_kernel, dwd_dilation))
            self.pw = _Conv(bank, f"{prefix}.pw", pointwise_spec(channels, channels))
        if self.use_da:
            bottleneck = max(1, channels // se_reduction)
            self.fc1 = _Linear(bank, f"{prefix}.se_fc1", channels, bottleneck)
            self.fc2 = _Linear(bank, f"{prefix}.se_fc2", bottleneck, channels)

    def forward(self, tape: Tape, h: Variable) -> Variable:
        if h.value.rank != 4 or h.value.shape[1] != self.channels:
            raise ConfigError(
                f"attention block expects [B, {self.channels}, H, W], got {h.value.shape}"
            )
        if self.baseline:
            return ag.silu(self.norm(tape, self.conv(tape, h)))
        if self.use_sa:
            sa = self.pw(tape, self.dwd(tape, self.dw(tape, self.norm(tape, h))))
        if self.use_da:
            batch = h.value.shape[0]
            pooled = ag.reshape(ag.global_avg_pool(h), (batch, self.channels))
            gate = ag.sigmoid(self.fc2(tape, ag.silu(self.fc1(tape, pooled))))
            da = ag.reshape(gate, (batch, self.channels, 1, 1))
        if self.use_sa and self.use_da:
            attended = ag.mul(ag.broadcast_mul(sa, da), h)
        elif self.use_sa:
            attended = ag.mul(sa, h)
        elif self.use_da:
            attended = ag.broadcast_mul(h, da)
        else:
            attended = h  # both gates are ones; the residual doubles h
        return ag.add(h, attended)

    def apply(self, h: Tensor) -> Tensor:
        """Tape-free convenience for tests and inference on a lone block."""
        return self.forward(Tape(), Variable.constant(h)).value


class VideoPredictor:
    """Maps [B, T, C, H, W] past frames to [B, T, C, H, W] future frames."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        bank = _ParamBank(seed, dtype)
        cs = config.hidden_spatial
        ct = config.temporal_channels
        tcs = config.frames_in * cs

        self.enc = []
        in_ch = config.in_channels
        for i, stride in enumerate(config.encoder_strides):
            k = 4 if stride == 2 else 3
            spec = ConvSpec(in_ch, cs, k, k, stride=stride, padding=1)
            conv = _Conv(bank, f"encoder.conv{i}", spec, bias=False)
            norm = _Norm(bank, f"encoder.norm{i}", cs, config.norm_groups)
            self.enc.append((conv, norm))
            in_ch = cs

        self.entry = _Conv(bank, "temporal.entry", pointwise_spec(tcs, ct))
        self.blocks = [
            TemporalAttentionBlock(
                bank,
                f"temporal.block{j}",
                ct,
                dw_kernel=config.dw_kernel,
                dwd_kernel=config.dwd_kernel,
                dwd_dilation=config.dwd_dilation,
                se_reduction=config.se_reduction,
                norm_groups=config.norm_groups,
                ablation=config.ablation,
            )
            for j in range(config.num_tau_blocks)
        ]
        self.exit = _Conv(bank, "temporal.exit", pointwise_spec(ct, tcs))

        self.dec = []
        strides = config.decoder_strides
        for i, stride in enumerate(strides):
            k = 4 if stride == 2 else 3
            last = i == len(strides) - 1
            out_ch = config.in_channels if last else cs
            spec = ConvSpec(cs, out_ch, k, k, stride=stride, padding=1)
            deconv = _ConvTranspose(bank, f"decoder.deconv{i}", spec, bias=last)
            norm = None if last else _Norm(bank, f"decoder.norm{i}", cs, config.norm_groups)
            self.dec.append((deconv, norm))

        self._params = bank.params

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def parameter(self, pid: str) -> Parameter:
        return self._params[pid]

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def cast_(self, dtype) -> None:
        for p in self._params.values():
            p.cast_(dtype)

    @property
    def dtype(self):
        return next(iter(self._params.values())).value.dtype

    # -- forward ------------------------------------------------------------

    def _check_input(self, shape) -> None:
        cfg = self.config
        if len(shape) != 5:
            raise ConfigError(f"input must be [B, T, C, H, W], got shape {shape}")
        _, frames, channels, height, width = shape
        if frames != cfg.frames_in:
            raise ConfigError(f"input has {frames} frames, model expects {cfg.frames_in}")
        if channels != cfg.in_channels:
            raise ConfigError(f"input has {channels} channels, model expects {cfg.in_channels}")
        d = cfg.downsample_factor
        if height % d or width % d:
            raise ConfigError(
                f"spatial extents ({height}, {width}) must be divisible by "
                f"downsample_factor {d}"
            )

    def _encode_var(self, tape: Tape, xv: Variable):
        batch, frames, channels, height, width = xv.value.shape
        h = ag.reshape(xv, (batch * frames, channels, height, width))
        skip = None
        for i, (conv, norm) in enumerate(self.enc):
            h = ag.silu(norm(tape, conv(tape, h)))
            if i == 0:
                skip = h
        return h, skip

    def _forward_var(self, tape: Tape, xv: Variable) -> Variable:
        cfg = self.config
        batch, frames, channels, height, width = xv.value.shape
        d = cfg.downsample_factor
        hd, wd = height // d, width // d

        h, skip = self._encode_var(tape, xv)
        h = ag.reshape(h, (batch, frames * cfg.hidden_spatial, hd, wd))
        h = self.entry(tape, h)
        for block in self.blocks:
            h = block.forward(tape, h)
        h = self.exit(tape, h)
        h = ag.reshape(h, (batch * frames, cfg.hidden_spatial, hd, wd))

        for i, (deconv, norm) in enumerate(self.dec):
            if i == len(self.dec) - 1:
                h = ag.add(h, skip)  # residual from the first encoder stage
                h = deconv(tape, h)
            else:
                h = ag.silu(norm(tape, deconv(tape, h)))
        return ag.reshape(h, (batch, frames, channels, height, width))

    def forward(self, x: Tensor, tape: Tape | None = None):
        """Predict the next frames_out frames. Returns a Tensor, or the taped
        Variable when a tape is supplied."""
        self._check_input(x.shape)
        if tape is None:
            return self._forward_var(Tape(), Variable.constant(x)).value
        return self._forward_var(tape, Variable.constant(x))

    def encode(self, x: Tensor):
        """Spatial encoding only: ([B,T,C_s,H/d,W/d] latent, folded skip)."""
        self._check_input(x.shape)
        cfg = self.config
        batch, frames, _, height, width = x.shape
        d = cfg.downsample_factor
        latent, skip = self._encode_var(Tape(), Variable.constant(x))
        z = T.reshape(latent.value, (batch, frames, cfg.hidden_spatial, height // d, width // d))
        return z, skip.value

    def predict_recursive(self, x: Tensor, horizon: int) -> Tensor:
        """Roll the model forward, re-feeding clamped predictions, until
        `horizon` frames exist; surplus frames of the last call are dropped."""
        if horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {horizon}")
        self._check_input(x.shape)
        chunks = []
        produced = 0
        current = x
        while produced < horizon:
            pred = T.clamp(self.forward(current), 0.0, 1.0)
            chunks.append(pred.data)
            produced += self.config.frames_out
            current = pred  # == last frames_in frames of (input || predictions)
        out = np.concatenate(chunks, axis=1)[:, :horizon]
        return Tensor._wrap(np.ascontiguousarray(out))
