"""Optimizer, training loop, evaluation, and checkpoint persistence.

Determinism contract: the model seed, the train/validation split, and each
epoch's shuffle are all derived from TrainConfig.seed through fixed stream
tags, so a (dataset, config) pair reproduces the same parameter trajectory
bitwise within one build. Checkpoints store canonical little-endian sections
(config, params, optim, prng) sorted by parameter id, so load followed by
save is byte-identical.

Run artifacts in the output directory:
  run_log.csv   one row per epoch: epoch, train_loss, val_mse, val_mae,
                val_ssim, lr, wall_seconds (lr is the first step's rate).
  events.log    irregular events: skipped steps on non-finite gradients,
                gradient-norm clips.
  last.ckpt     written after every epoch.
  best.ckpt     written at the end only when the best validation MSE did not
                occur at the final epoch (otherwise last.ckpt already is the
                best and no separate file appears).
  best.txt      which epoch won and which checkpoint file holds it.
"""

from __future__ import annotations

import csv
import math
import os
import struct
import time
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from .autograd import Parameter, Tape, backward, zero_grads
from .data import Dataset
from .errors import ConfigError, DataError, NumericsError
from .loss import LossConfig, total_loss
from .metrics import MetricAccumulator, MetricReport
from .model import ModelConfig, VideoPredictor
from .rng import Stream, mix
from .tensor import Tensor

CHECKPOINT_MAGIC = b"STPLCKPT"
CHECKPOINT_VERSION = 1

_DTYPE_TAGS = {1: np.float32, 2: np.float64}
_TAG_FOR_DTYPE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}

# Stream tags: disjoint sub-seeds derived from TrainConfig.seed.
_TAG_MODEL_INIT = 0x0DE1
_TAG_VAL_SPLIT = 0x5EED
_TAG_SHUFFLE = 0x51ED

SCHEDULES = ("constant", "cosine")


def derive_model_seed(seed: int) -> int:
    return mix(seed, _TAG_MODEL_INIT)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 16
    lr: float = 0.01
    weight_decay: float = 0.05
    schedule: str = "cosine"
    warmup_frac: float = 0.05
    val_fraction: float = 0.1
    clip_norm: float = 0.0  # 0 disables clipping
    seed: int = 0
    loss: LossConfig = LossConfig()

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.lr > 0.0):
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not (0.0 <= self.warmup_frac < 1.0):
            raise ConfigError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.clip_norm < 0.0:
            raise ConfigError(f"clip_norm must be non-negative, got {self.clip_norm}")


# ---------------------------------------------------------------------------
# Optimizer


class AdamW:
    """Decoupled-weight-decay Adam. Moments share each parameter's dtype, so
    checkpoint round-trips keep the exact optimizer state."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        seen = set()
        for p in self.params:
            if p.id in seen:
                raise ConfigError(f"duplicate parameter id {p.id!r}")
            seen.add(p.id)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {p.id: np.zeros_like(p.value.data) for p in self.params}
        self.v = {p.id: np.zeros_like(p.value.data) for p in self.params}

    def step(self) -> list:
        """Apply one update. If any gradient is non-finite the whole step is
        skipped and the offending parameter ids are returned (grads are left
        untouched either way; the caller zeroes them)."""
        bad = [p.id for p in self.params if not np.isfinite(p.grad.data).all()]
        if bad:
            return bad
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p in self.params:
            g = p.grad.data
            m = self.m[p.id]
            v = self.v[p.id]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay != 0.0:
                update = update + self.weight_decay * p.value.data
            p.value.data -= self.lr * update
        return []


def adamw_step(optim: AdamW) -> list:
    return optim.step()


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        g = p.grad.data.astype(np.float64, copy=False)
        total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Learning rate for 0-based global step `step` of `total_steps`."""
    if cfg.schedule == "constant":
        return cfg.lr
    warmup = int(round(cfg.warmup_frac * total_steps))
    if step < warmup:
        return cfg.lr * (step + 1) / warmup
    span = max(1, total_steps - warmup)
    progress = (step - warmup) / span
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# Checkpoints


def _config_text(config: ModelConfig) -> str:
    parts = []
    for f in sorted(dataclass_fields(config), key=lambda f: f.name):
        parts.append(f"{f.name}={getattr(config, f.name)}")
    return "\n".join(parts) + "\n"


def _config_from_text(text: str) -> ModelConfig:
    values = {}
    for line in text.splitlines():
        if not line:
            continue
        key, _, raw = line.partition("=")
        values[key] = raw
    kwargs = {}
    for f in dataclass_fields(ModelConfig):
        if f.name not in values:
            raise DataError(f"checkpoint config is missing field {f.name!r}")
        raw = values.pop(f.name)
        kwargs[f.name] = raw if f.name == "ablation" else int(raw)
    if values:
        raise DataError(f"checkpoint config has unknown fields {sorted(values)}")
    return ModelConfig(**kwargs)


def _write_tensor(out, arr: np.ndarray) -> None:
    tag = _TAG_FOR_DTYPE[arr.dtype]
    out.append(struct.pack("<BB", tag, arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    out.append(le.tobytes())


def _read_tensor(buf: memoryview, pos: int):
    tag, rank = struct.unpack_from("<BB", buf, pos)
    pos += 2
    if tag not in _DTYPE_TAGS:
        raise DataError(f"unknown checkpoint dtype tag {tag}")
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    dtype = np.dtype(_DTYPE_TAGS[tag]).newbyteorder("<")
    count = math.prod(shape)
    nbytes = count * dtype.itemsize
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape)
    pos += nbytes
    native = np.ascontiguousarray(arr.astype(_DTYPE_TAGS[tag]))
    return native, pos


def save_checkpoint(path, model: VideoPredictor, optim: AdamW, epoch: int,
                    train_seed: int) -> None:
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, epoch)]
    out.append(struct.pack("<Q", train_seed & 0xFFFFFFFFFFFFFFFF))
    config_blob = _config_text(model.config).encode()
    out.append(struct.pack("<I", len(config_blob)))
    out.append(config_blob)

    ids = sorted(p.id for p in model.parameters())
    out.append(struct.pack("<I", len(ids)))
    for pid in ids:
        blob = pid.encode()
        out.append(struct.pack("<I", len(blob)))
        out.append(blob)
        _write_tensor(out, model.parameter(pid).value.data)

    out.append(struct.pack("<Q", optim.step_count))
    out.append(struct.pack("<5d", optim.lr, optim.beta1, optim.beta2, optim.eps,
                           optim.weight_decay))
    for pid in ids:
        _write_tensor(out, optim.m[pid])
        _write_tensor(out, optim.v[pid])

    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(out))
    os.replace(tmp, path)


def load_checkpoint(path, expect_config: ModelConfig | None = None):
    """Returns (model, optim, epoch, train_seed) rebuilt from the file."""
    with open(path, "rb") as f:
        raw = f.read()
    buf = memoryview(raw)
    if raw[:8] != CHECKPOINT_MAGIC:
        raise DataError(
            f"bad checkpoint magic at byte offset 0: expected {CHECKPOINT_MAGIC!r}, "
            f"got {raw[:8]!r}"
        )
    version, epoch = struct.unpack_from("<II", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (train_seed,) = struct.unpack_from("<Q", buf, 16)
    pos = 24
    (config_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    config = _config_from_text(bytes(buf[pos:pos + config_len]).decode())
    pos += config_len
    if expect_config is not None and config != expect_config:
        raise ConfigError(
            "checkpoint model config does not match the requested config; "
            f"stored {config}, requested {expect_config}"
        )

    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    stored = {}
    order = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        pid = bytes(buf[pos:pos + id_len]).decode()
        pos += id_len
        arr, pos = _read_tensor(buf, pos)
        stored[pid] = arr
        order.append(pid)

    model = VideoPredictor(config, seed=0)
    have = {p.id for p in model.parameters()}
    if have != set(order):
        missing = sorted(have - set(order))
        extra = sorted(set(order) - have)
        raise DataError(
            f"checkpoint parameters do not match the model: missing {missing}, "
            f"unexpected {extra}"
        )
    dtype = stored[order[0]].dtype if order else np.float32
    model.cast_(dtype)
    for pid in order:
        p = model.parameter(pid)
        if stored[pid].shape != p.value.data.shape:
            raise DataError(
                f"checkpoint parameter {pid!r} has shape {stored[pid].shape}, "
                f"model expects {p.value.data.shape}"
            )
        p.value.data[...] = stored[pid]

    (step_count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    lr, beta1, beta2, eps, weight_decay = struct.unpack_from("<5d", buf, pos)
    pos += 40
    optim = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay,
                  betas=(beta1, beta2), eps=eps)
    optim.step_count = step_count
    for pid in order:
        m, pos = _read_tensor(buf, pos)
        v, pos = _read_tensor(buf, pos)
        optim.m[pid][...] = m
        optim.v[pid][...] = v
    if pos != len(raw):
        raise DataError(f"checkpoint has {len(raw) - pos} trailing bytes at offset {pos}")
    return model, optim, epoch, train_seed


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(dataset: Dataset, model: VideoPredictor, *, horizon: int | None = None,
             indices=None, batch_size: int = 16) -> MetricReport:
    """Metrics over a dataset; never mutates parameters. A horizon beyond
    frames_out rolls the model recursively; the dataset must carry
    frames_in + horizon frames per sequence. Predictions are clipped to
    [0,1] before scoring, matching the recursive path's clamping."""
    cfg = model.config
    horizon = cfg.frames_out if horizon is None else horizon
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    acc = MetricAccumulator(horizon)
    for batch in dataset.batches(frames_in=cfg.frames_in, frames_out=horizon,
                                 batch_size=batch_size, indices=indices):
        if horizon == cfg.frames_out:
            pred = model.forward(batch.past)
            pred = Tensor._wrap(np.clip(pred.data, 0.0, 1.0))
        else:
            pred = model.predict_recursive(batch.past, horizon)
        acc.add_batch(pred, batch.future)
    return acc.report()


# ---------------------------------------------------------------------------
# Training loop


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_mse: float
    val_mae: float
    val_ssim: float
    lr: float
    wall_seconds: float


@dataclass(frozen=True)
class TrainResult:
    history: tuple
    best_epoch: int
    best_val_mse: float
    last_path: str
    best_path: str | None
    log_path: str


RUN_LOG_COLUMNS = ("epoch", "train_loss", "val_mse", "val_mae", "val_ssim", "lr",
                   "wall_seconds")


def split_indices(count: int, val_fraction: float, seed: int):
    """Deterministic (train, val) index split; val is never empty."""
    if count < 1:
        raise ConfigError("dataset is empty")
    if count == 1:
        return [0], [0]
    perm = Stream(mix(seed, _TAG_VAL_SPLIT)).permutation(count)
    val_count = min(count - 1, max(1, round(val_fraction * count)))
    return list(perm[val_count:]), list(perm[:val_count])


def _append_log_row(path, stats: EpochStats, write_header: bool) -> None:
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if write_header:
            writer.writerow(RUN_LOG_COLUMNS)
        writer.writerow([
            stats.epoch, repr(stats.train_loss), repr(stats.val_mse),
            repr(stats.val_mae), repr(stats.val_ssim), repr(stats.lr),
            repr(stats.wall_seconds),
        ])


def _read_log_history(path):
    """(best_epoch, best_val_mse) recovered from an existing run log."""
    best_epoch, best_mse = -1, math.inf
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            mse = float(row["val_mse"])
            if mse < best_mse:
                best_epoch, best_mse = int(row["epoch"]), mse
    return best_epoch, best_mse


def train(dataset: Dataset, model: VideoPredictor, cfg: TrainConfig, out_dir,
          *, resume: bool = False) -> TrainResult:
    os.makedirs(out_dir, exist_ok=True)
    last_path = os.path.join(out_dir, "last.ckpt")
    best_path = os.path.join(out_dir, "best.ckpt")
    log_path = os.path.join(out_dir, "run_log.csv")
    events_path = os.path.join(out_dir, "events.log")

    mcfg = model.config
    n, length, channels, height, width = dataset.shape
    if length != mcfg.frames_in + mcfg.frames_out:
        raise DataError(
            f"dataset sequences have {length} frames, model consumes "
            f"{mcfg.frames_in}+{mcfg.frames_out}"
        )
    if channels != mcfg.in_channels:
        raise DataError(f"dataset has {channels} channels, model expects {mcfg.in_channels}")
    d = mcfg.downsample_factor
    if height % d or width % d:
        raise DataError(
            f"dataset frames ({height}x{width}) are not divisible by "
            f"downsample_factor {d}"
        )

    train_idx, val_idx = split_indices(n, cfg.val_fraction, cfg.seed)
    steps_per_epoch = math.ceil(len(train_idx) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    if not resume:
        for stale in (log_path, events_path):
            if os.path.exists(stale):
                os.remove(stale)

    start_epoch = 0
    best_epoch, best_mse = -1, math.inf
    best_stash = None
    if resume and os.path.exists(last_path):
        loaded, optim, done_epochs, stored_seed = load_checkpoint(last_path, mcfg)
        if stored_seed != cfg.seed & 0xFFFFFFFFFFFFFFFF:
            raise ConfigError(
                f"cannot resume: checkpoint was trained with seed {stored_seed}, "
                f"config says {cfg.seed}"
            )
        for p in loaded.parameters():
            model.parameter(p.id).value.data[...] = p.value.data
        optim.params = model.parameters()
        start_epoch = done_epochs
        if os.path.exists(log_path):
            best_epoch, best_mse = _read_log_history(log_path)
    else:
        optim = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    params = model.parameters()
    shuffle_root = Stream(mix(cfg.seed, _TAG_SHUFFLE))
    history = []
    write_header = not (resume and os.path.exists(log_path))

    def log_event(text: str) -> None:
        with open(events_path, "a") as f:
            f.write(text + "\n")

    for epoch in range(start_epoch, cfg.epochs):
        epoch_start = time.monotonic()
        order = shuffle_root.child(epoch).permutation(len(train_idx))
        shuffled = [train_idx[i] for i in order]
        loss_sum = 0.0
        sample_count = 0
        first_lr = lr_at(epoch * steps_per_epoch, total_steps, cfg)
        for batch_index, batch in enumerate(dataset.batches(
                frames_in=mcfg.frames_in, frames_out=mcfg.frames_out,
                batch_size=cfg.batch_size, indices=shuffled)):
            step = epoch * steps_per_epoch + batch_index
            optim.lr = lr_at(step, total_steps, cfg)
            tape = Tape()
            pred = model.forward(batch.past, tape)
            try:
                loss_var = total_loss(pred, batch.future, cfg.loss)
            except NumericsError as e:
                raise NumericsError(
                    f"non-finite training loss at epoch {epoch} batch {batch_index} "
                    f"(sequences {batch.indices}): {e}"
                ) from e
            loss_value = float(loss_var.value.data[0])
            backward(tape, loss_var)
            if cfg.clip_norm > 0.0:
                norm = global_grad_norm(params)
                if norm > cfg.clip_norm:
                    scale = cfg.clip_norm / norm
                    for p in params:
                        p.grad.data *= scale
                    log_event(
                        f"epoch={epoch} batch={batch_index} event=grad_clip "
                        f"norm={norm!r} clipped_to={cfg.clip_norm!r}"
                    )
            skipped = optim.step()
            if skipped:
                log_event(
                    f"epoch={epoch} batch={batch_index} event=skipped_step "
                    f"reason=nonfinite_grad params={','.join(skipped)}"
                )
            zero_grads(params)
            b = batch.past.shape[0]
            loss_sum += loss_value * b
            sample_count += b

        val_report = evaluate(dataset, model, indices=val_idx, batch_size=cfg.batch_size)
        stats = EpochStats(
            epoch=epoch,
            train_loss=loss_sum / sample_count,
            val_mse=val_report.mse,
            val_mae=val_report.mae,
            val_ssim=val_report.ssim,
            lr=first_lr,
            wall_seconds=time.monotonic() - epoch_start,
        )
        history.append(stats)
        _append_log_row(log_path, stats, write_header)
        write_header = False
        save_checkpoint(last_path, model, optim, epoch + 1, cfg.seed)
        if stats.val_mse < best_mse:
            best_epoch, best_mse = epoch, stats.val_mse
            best_stash = (
                {p.id: p.value.data.copy() for p in params},
                {pid: m.copy() for pid, m in optim.m.items()},
                {pid: v.copy() for pid, v in optim.v.items()},
                optim.step_count, optim.lr, epoch + 1,
            )

    final_epoch = cfg.epochs - 1
    best_file = None
    if best_epoch != final_epoch and best_stash is not None:
        saved_values = {p.id: p.value.data.copy() for p in params}
        saved_m = {pid: m.copy() for pid, m in optim.m.items()}
        saved_v = {pid: v.copy() for pid, v in optim.v.items()}
        saved_step, saved_lr = optim.step_count, optim.lr
        values, ms, vs, step_count, lr, done = best_stash
        for p in params:
            p.value.data[...] = values[p.id]
        optim.m, optim.v, optim.step_count, optim.lr = ms, vs, step_count, lr
        save_checkpoint(best_path, model, optim, done, cfg.seed)
        for p in params:
            p.value.data[...] = saved_values[p.id]
        optim.m, optim.v, optim.step_count, optim.lr = saved_m, saved_v, saved_step, saved_lr
        best_file = best_path
    elif best_epoch == final_epoch:
        best_file = last_path

    with open(os.path.join(out_dir, "best.txt"), "w") as f:
        f.write(f"best_epoch={best_epoch}\n")
        f.write(f"best_val_mse={best_mse!r}\n")
        checkpoint_name = os.path.basename(best_file) if best_file else "unavailable"
        f.write(f"checkpoint={checkpoint_name}\n")

    return TrainResult(
        history=tuple(history),
        best_epoch=best_epoch,
        best_val_mse=best_mse,
        last_path=last_path,
        best_path=best_file,
        log_path=log_path,
    )
