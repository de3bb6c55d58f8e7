"""Evaluation metrics over [0,1] video frames: MSE, MAE, SSIM, PSNR.

Error-metric convention: MSE and MAE are per-frame sums over all pixels (not
means), and reported set-level numbers are the mean of those sums over frames
and sequences. A 64x64 frame with a uniform 0.07 absolute error therefore
scores MSE ~= 20, the magnitude regime of the usual video-prediction tables.
This deliberately differs from the training loss, which is pixel-normalized.

Sums are computed with math.fsum (exactly rounded), so results do not depend
on accumulation order. SSIM and PSNR are computed in 64-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericsError
from .tensor import Tensor

PSNR_CAP_DB = 100.0


def _frame_array(name: str, x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim != 3:
        raise ConfigError(f"{name} must be [C, H, W], got shape {arr.shape}")
    return arr.astype(np.float64, copy=False)


def _frame_pair(y_hat, y):
    a = _frame_array("prediction", y_hat)
    b = _frame_array("target", y)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch: prediction {a.shape} vs target {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericsError("metric inputs contain non-finite values")
    return a, b


def mse_frame(y_hat, y) -> float:
    """Sum of squared pixel errors over the whole frame."""
    a, b = _frame_pair(y_hat, y)
    diff = a - b
    return math.fsum((diff * diff).ravel().tolist())


def mae_frame(y_hat, y) -> float:
    """Sum of absolute pixel errors over the whole frame."""
    a, b = _frame_pair(y_hat, y)
    return math.fsum(np.abs(a - b).ravel().tolist())


def psnr_frame(y_hat, y, L: float = 1.0) -> float:
    """10*log10(L^2 / per-pixel mean squared error); inf for identical frames."""
    a, b = _frame_pair(y_hat, y)
    total = mse_frame(a, b)
    if total == 0.0:
        return math.inf
    per_pixel = total / a.size
    return 10.0 * math.log10((L * L) / per_pixel)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    coords = np.arange(window, dtype=np.float64) - half
    g = np.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def ssim_frame(
    y_hat,
    y,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    L: float = 1.0,
) -> float:
    """Gaussian-windowed SSIM, mean over valid positions and channels."""
    a, b = _frame_pair(y_hat, y)
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be odd and >= 1, got {window}")
    _, height, width = a.shape
    if height < window or width < window:
        raise ConfigError(
            f"frame extents ({height}, {width}) must be >= window {window}"
        )
    kernel = _gaussian_kernel(window, sigma)
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2
    values = []
    for c in range(a.shape[0]):
        wa = sliding_window_view(a[c], (window, window))
        wb = sliding_window_view(b[c], (window, window))
        mu_a = np.tensordot(wa, kernel, axes=([2, 3], [0, 1]))
        mu_b = np.tensordot(wb, kernel, axes=([2, 3], [0, 1]))
        e_aa = np.tensordot(wa * wa, kernel, axes=([2, 3], [0, 1]))
        e_bb = np.tensordot(wb * wb, kernel, axes=([2, 3], [0, 1]))
        e_ab = np.tensordot(wa * wb, kernel, axes=([2, 3], [0, 1]))
        var_a = e_aa - mu_a * mu_a
        var_b = e_bb - mu_b * mu_b
        cov = e_ab - mu_a * mu_b
        smap = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
            (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        )
        values.append(smap.ravel())
    return float(np.mean(np.concatenate(values)))


# ---------------------------------------------------------------------------
# Set-level aggregation


@dataclass(frozen=True)
class MetricReport:
    sequences: int
    frames: int  # frames per sequence
    per_frame_mse: tuple
    per_frame_mae: tuple
    per_frame_ssim: tuple
    per_frame_psnr: tuple  # capped at PSNR_CAP_DB
    mse: float
    mae: float
    ssim: float
    psnr: float

    def as_text(self) -> str:
        lines = [
            f"sequences={self.sequences}",
            f"frames={self.frames}",
            f"mse={self.mse!r}",
            f"mae={self.mae!r}",
            f"ssim={self.ssim!r}",
            f"psnr={self.psnr!r}",
        ]
        return "\n".join(lines) + "\n"

    def as_csv(self) -> str:
        rows = ["frame,mse,mae,ssim,psnr"]
        for i in range(self.frames):
            rows.append(
                f"{i},{self.per_frame_mse[i]!r},{self.per_frame_mae[i]!r},"
                f"{self.per_frame_ssim[i]!r},{self.per_frame_psnr[i]!r}"
            )
        return "\n".join(rows) + "\n"


class MetricAccumulator:
    """Accumulates per-frame metrics over sequences; mean-reduces on report()."""

    def __init__(self, frames: int):
        if frames < 1:
            raise ConfigError(f"frames must be >= 1, got {frames}")
        self.frames = frames
        self.sequences = 0
        self._sums = {name: [0.0] * frames for name in ("mse", "mae", "ssim", "psnr")}

    def add_sequence(self, y_hat: Tensor, y: Tensor) -> None:
        pred = y_hat.data if isinstance(y_hat, Tensor) else np.asarray(y_hat)
        target = y.data if isinstance(y, Tensor) else np.asarray(y)
        if pred.ndim != 4 or target.shape != pred.shape:
            raise ConfigError(
                f"sequences must share shape [T', C, H, W]; got {pred.shape} vs {target.shape}"
            )
        if pred.shape[0] != self.frames:
            raise ConfigError(f"expected {self.frames} frames, got {pred.shape[0]}")
        for i in range(self.frames):
            self._sums["mse"][i] += mse_frame(pred[i], target[i])
            self._sums["mae"][i] += mae_frame(pred[i], target[i])
            self._sums["ssim"][i] += ssim_frame(pred[i], target[i])
            self._sums["psnr"][i] += min(psnr_frame(pred[i], target[i]), PSNR_CAP_DB)
        self.sequences += 1

    def add_batch(self, y_hat: Tensor, y: Tensor) -> None:
        pred = y_hat.data if isinstance(y_hat, Tensor) else np.asarray(y_hat)
        target = y.data if isinstance(y, Tensor) else np.asarray(y)
        if pred.ndim != 5 or target.shape != pred.shape:
            raise ConfigError(
                f"batches must share shape [B, T', C, H, W]; got {pred.shape} vs {target.shape}"
            )
        for n in range(pred.shape[0]):
            self.add_sequence(pred[n], target[n])

    def report(self) -> MetricReport:
        if self.sequences == 0:
            raise ConfigError("no sequences accumulated")
        per_frame = {
            name: tuple(s / self.sequences for s in sums)
            for name, sums in self._sums.items()
        }
        overall = {name: math.fsum(vals) / self.frames for name, vals in per_frame.items()}
        return MetricReport(
            sequences=self.sequences,
            frames=self.frames,
            per_frame_mse=per_frame["mse"],
            per_frame_mae=per_frame["mae"],
            per_frame_ssim=per_frame["ssim"],
            per_frame_psnr=per_frame["psnr"],
            mse=overall["mse"],
            mae=overall["mae"],
            ssim=overall["ssim"],
            psnr=overall["psnr"],
        )


def save_report(report: MetricReport, text_path, csv_path) -> None:
    with open(text_path, "w") as f:
        f.write(report.as_text())
    with open(csv_path, "w") as f:
        f.write(report.as_csv())
