"""Bouncing-digit video synthesis and the on-disk dataset format.

Sequences place sprites at uniform-random positions, move them along straight
lines with boundary reflection, and composite them by per-pixel maximum.
Trajectories are computed in 64-bit and rasterized at integer-rounded
positions, and every sequence derives its own child seed from (root seed,
index), so generation is bitwise reproducible and order-independent.

Dataset files are a fixed little-endian container: 8-byte magic, u32 version,
u8 dtype tag, u8 rank, rank u32 extents, then the raw f32 payload. Readers
memory-map the payload. Source digits come either from IDX image files
(big-endian, the classic 28x28 layout) or from the built-in synthetic bank.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError
from .rng import Stream, mix
from .tensor import Tensor

DATASET_MAGIC = b"STPLDAT1"
DATASET_VERSION = 1
DTYPE_TAG_F32 = 1

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


@dataclass(frozen=True)
class MovingSpec:
    num_digits: int = 2
    canvas: int = 64
    digit_size: int = 28
    seq_len: int = 20
    speed_min: float = 2.0
    speed_max: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.num_digits < 1:
            raise ConfigError(f"num_digits must be >= 1, got {self.num_digits}")
        if self.digit_size < 1 or self.digit_size > self.canvas:
            raise ConfigError(
                f"digit_size must be in [1, canvas={self.canvas}], got {self.digit_size}"
            )
        if self.seq_len < 2:
            raise ConfigError(f"seq_len must be >= 2, got {self.seq_len}")
        if self.speed_min < 0.0 or self.speed_max < self.speed_min:
            raise ConfigError(
                f"speed range [{self.speed_min}, {self.speed_max}] must satisfy "
                "0 <= min <= max"
            )


# ---------------------------------------------------------------------------
# IDX ingestion (and fixture writing, so round-trips are testable offline)


def _read_exact(f, count: int, what: str, offset: int) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise DataError(
            f"truncated {what} at byte offset {offset}: expected {count} bytes, "
            f"got {len(buf)}"
        )
    return buf


def load_mnist_idx(path) -> list:
    """Load an IDX3 image file into a list of [0,1] float32 arrays."""
    with open(path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, "IDX header", 0))[0]
        if magic != IDX_MAGIC_IMAGES:
            raise DataError(
                f"bad IDX image magic at byte offset 0: expected "
                f"{IDX_MAGIC_IMAGES:#010x}, got {magic:#010x}"
            )
        count, rows, cols = struct.unpack(">III", _read_exact(f, 12, "IDX dims", 4))
        payload = f.read()
    expected = count * rows * cols
    if len(payload) != expected:
        raise DataError(
            f"truncated IDX payload at byte offset 16: expected {expected} bytes "
            f"for {count} images of {rows}x{cols}, got {len(payload)}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    scaled = raw.astype(np.float32) / np.float32(255.0)
    return [np.ascontiguousarray(scaled[i]) for i in range(count)]


def load_mnist_labels(path) -> np.ndarray:
    """Load an IDX1 label file into a uint8 vector."""
    with open(path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, "IDX header", 0))[0]
        if magic != IDX_MAGIC_LABELS:
            raise DataError(
                f"bad IDX label magic at byte offset 0: expected "
                f"{IDX_MAGIC_LABELS:#010x}, got {magic:#010x}"
            )
        count = struct.unpack(">I", _read_exact(f, 4, "IDX dims", 4))[0]
        payload = f.read()
    if len(payload) != count:
        raise DataError(
            f"truncated IDX payload at byte offset 8: expected {count} bytes, "
            f"got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).copy()


def write_mnist_idx(path, images: np.ndarray) -> None:
    """Write [N, rows, cols] uint8 images in IDX3 layout (test fixtures)."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ConfigError(f"images must be [N, rows, cols], got shape {images.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_MAGIC_IMAGES, *images.shape))
        f.write(images.tobytes())


def write_mnist_labels(path, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_MAGIC_LABELS, labels.shape[0]))
        f.write(labels.tobytes())


# ---------------------------------------------------------------------------
# Synthetic digit bank: a 5x7 bitmap font upsampled to the classic 28x28.

_FONT_ROWS = {
    0: (0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E),
    1: (0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E),
    2: (0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F),
    3: (0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E),
    4: (0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02),
    5: (0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E),
    6: (0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E),
    7: (0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08),
    8: (0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E),
    9: (0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C),
}


def _glyph(value: int) -> np.ndarray:
    rows = _FONT_ROWS[value]
    g = np.zeros((7, 5), dtype=np.float32)
    for i, row in enumerate(rows):
        for j in range(5):
            g[i, j] = (row >> (4 - j)) & 1
    return g


def synthetic_digit_bank(per_class: int = 1, seed: int = 0) -> list:
    """28x28 digit sprites from the built-in font; extra copies per class are
    horizontally jittered so multi-sample banks are not literal duplicates."""
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    stream = Stream(mix(seed, 0xF0_17))
    bank = []
    for value in range(10):
        body = np.repeat(np.repeat(_glyph(value), 4, axis=0), 4, axis=1)  # 28x20
        for copy in range(per_class):
            left = 4 if copy == 0 else stream.next_below(9)
            sprite = np.zeros((28, 28), dtype=np.float32)
            sprite[:, left:left + 20] = body
            bank.append(sprite)
    return bank


def _fit_sprite(img: np.ndarray, size: int) -> np.ndarray:
    """Nearest-pixel resample of a square-ish sprite to size x size."""
    src_h, src_w = img.shape
    if (src_h, src_w) == (size, size):
        return np.ascontiguousarray(img, dtype=np.float32)
    ri = (np.arange(size) * src_h) // size
    ci = (np.arange(size) * src_w) // size
    return np.ascontiguousarray(img[np.ix_(ri, ci)], dtype=np.float32)


# ---------------------------------------------------------------------------
# Sequence synthesis


def _reflect(pos: float, vel: float, limit: float):
    """Fold a position back into [0, limit], negating velocity per contact."""
    if limit <= 0.0:
        return 0.0, vel
    while True:
        if pos < 0.0:
            pos, vel = -pos, -vel
        elif pos > limit:
            pos, vel = 2.0 * limit - pos, -vel
        else:
            return pos, vel


def generate_sequence(spec: MovingSpec, digits: list) -> Tensor:
    """One [seq_len, 1, canvas, canvas] sequence, fully determined by the seed."""
    if not digits:
        raise ConfigError("digit pool is empty")
    stream = Stream(spec.seed)
    limit = float(spec.canvas - spec.digit_size)
    sprites = []
    state = []  # per digit: [x, y, vx, vy], 64-bit throughout
    for _ in range(spec.num_digits):
        choice = stream.next_below(len(digits))
        sprites.append(_fit_sprite(digits[choice], spec.digit_size))
        x = stream.uniform(0.0, limit)
        y = stream.uniform(0.0, limit)
        theta = stream.uniform(0.0, 2.0 * math.pi)
        speed = stream.uniform(spec.speed_min, spec.speed_max)
        state.append([x, y, speed * math.cos(theta), speed * math.sin(theta)])

    frames = np.zeros((spec.seq_len, 1, spec.canvas, spec.canvas), dtype=np.float32)
    size = spec.digit_size
    for t in range(spec.seq_len):
        buf = frames[t, 0]
        for sprite, s in zip(sprites, state):
            col = int(math.floor(s[0] + 0.5))
            row = int(math.floor(s[1] + 0.5))
            region = buf[row:row + size, col:col + size]
            np.maximum(region, sprite, out=region)
        for s in state:
            s[0], s[2] = _reflect(s[0] + s[2], s[2], limit)
            s[1], s[3] = _reflect(s[1] + s[3], s[3], limit)
    return Tensor._wrap(frames)


# ---------------------------------------------------------------------------
# Dataset container


@dataclass(frozen=True)
class DatasetHeader:
    shape: tuple
    version: int = DATASET_VERSION
    dtype_tag: int = DTYPE_TAG_F32

    @property
    def payload_bytes(self) -> int:
        return 4 * math.prod(self.shape)

    @property
    def header_bytes(self) -> int:
        return len(DATASET_MAGIC) + 4 + 1 + 1 + 4 * len(self.shape)


def _write_header(f, shape) -> None:
    f.write(DATASET_MAGIC)
    f.write(struct.pack("<I", DATASET_VERSION))
    f.write(struct.pack("<BB", DTYPE_TAG_F32, len(shape)))
    for extent in shape:
        f.write(struct.pack("<I", extent))


def _read_header(f) -> DatasetHeader:
    magic = _read_exact(f, len(DATASET_MAGIC), "dataset magic", 0)
    if magic != DATASET_MAGIC:
        raise DataError(
            f"bad dataset magic at byte offset 0: expected {DATASET_MAGIC!r}, got {magic!r}"
        )
    version = struct.unpack("<I", _read_exact(f, 4, "dataset version", 8))[0]
    if version != DATASET_VERSION:
        raise DataError(f"unsupported dataset version {version}, expected {DATASET_VERSION}")
    dtype_tag, rank = struct.unpack("<BB", _read_exact(f, 2, "dataset dtype/rank", 12))
    if dtype_tag != DTYPE_TAG_F32:
        raise DataError(f"unsupported dtype tag {dtype_tag}, expected {DTYPE_TAG_F32} (f32)")
    if rank < 1:
        raise DataError(f"dataset rank must be >= 1, got {rank}")
    extents = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dataset extents", 14))
    if any(e < 1 for e in extents):
        raise DataError(f"dataset extents must be positive, got {extents}")
    return DatasetHeader(shape=tuple(extents), version=version, dtype_tag=dtype_tag)


def generate_dataset(spec: MovingSpec, count: int, out_path, digits: list) -> DatasetHeader:
    """Stream `count` sequences to disk; sequence i uses child seed mix(seed, i)."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    shape = (count, spec.seq_len, 1, spec.canvas, spec.canvas)
    header = DatasetHeader(shape=shape)
    with open(out_path, "wb") as f:
        _write_header(f, shape)
        for i in range(count):
            seq = generate_sequence(replace(spec, seed=mix(spec.seed, i)), digits)
            arr = seq.data
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise DataError(f"sequence {i} has values outside [0, 1]")
            f.write(arr.astype("<f4", copy=False).tobytes())
    return header


@dataclass(frozen=True)
class VideoBatch:
    past: Tensor
    future: Tensor
    indices: tuple


class Dataset:
    """Memory-mapped reader for the dataset container."""

    def __init__(self, path):
        self.path = path
        with open(path, "rb") as f:
            self.header = _read_header(f)
            offset = f.tell()
            f.seek(0, 2)
            actual = f.tell() - offset
        expected = self.header.payload_bytes
        if actual != expected:
            raise DataError(
                f"truncated dataset payload at byte offset {offset}: "
                f"expected {expected} bytes, got {actual}"
            )
        if len(self.header.shape) != 5:
            raise DataError(
                f"dataset must be rank 5 [N, L, C, H, W], got rank {len(self.header.shape)}"
            )
        self._data = np.memmap(path, dtype="<f4", mode="r", offset=offset,
                               shape=self.header.shape)

    def __len__(self) -> int:
        return self.header.shape[0]

    @property
    def shape(self) -> tuple:
        return self.header.shape

    def sequence(self, index: int) -> np.ndarray:
        return np.ascontiguousarray(self._data[index], dtype=np.float32)

    def batches(self, *, frames_in: int, frames_out: int, batch_size: int, indices=None):
        """Yield VideoBatch chunks (the last one may be smaller)."""
        n, length = self.header.shape[0], self.header.shape[1]
        if frames_in < 1 or frames_out < 1:
            raise ConfigError("frames_in and frames_out must be >= 1")
        if frames_in + frames_out != length:
            raise DataError(
                f"dataset sequences have {length} frames but the run config "
                f"needs frames_in + frames_out = {frames_in + frames_out}"
            )
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        if indices is None:
            indices = range(n)
        indices = list(indices)
        for i in indices:
            if not 0 <= i < n:
                raise ConfigError(f"sequence index {i} out of range [0, {n})")
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            block = np.ascontiguousarray(self._data[chunk], dtype=np.float32)
            past = np.ascontiguousarray(block[:, :frames_in])
            future = np.ascontiguousarray(block[:, frames_in:])
            yield VideoBatch(Tensor._wrap(past), Tensor._wrap(future), tuple(chunk))


def read_dataset(path, *, frames_in: int, frames_out: int, batch_size: int = 1, indices=None):
    """Open a dataset file and iterate VideoBatch chunks."""
    yield from Dataset(path).batches(
        frames_in=frames_in, frames_out=frames_out, batch_size=batch_size, indices=indices
    )


# ---------------------------------------------------------------------------
# Frame export


def write_pgm(path, frame: np.ndarray) -> None:
    """Write one [0,1] grayscale frame as binary 8-bit PGM."""
    if frame.ndim != 2:
        raise ConfigError(f"PGM frames must be 2-D, got shape {frame.shape}")
    quantized = np.clip(np.floor(frame.astype(np.float64) * 255.0 + 0.5), 0.0, 255.0)
    data = quantized.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (frame.shape[1], frame.shape[0]))
        f.write(data.tobytes())
