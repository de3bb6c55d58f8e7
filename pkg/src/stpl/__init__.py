"""Spatiotemporal video prediction with temporal attention, self-contained:
tensors and autograd on numpy, a compiled im2col/col2im core with a pure
fallback, bouncing-digit data synthesis, training, metrics, and a CLI.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import ConfigError, DataError, NumericsError, StplError, TapeError
from .loss import LossConfig, ddr, forward_difference, total_loss
from .metrics import MetricAccumulator, MetricReport, mae_frame, mse_frame, psnr_frame, ssim_frame
from .model import ABLATIONS, ModelConfig, TemporalAttentionBlock, VideoPredictor
from .data import Dataset, MovingSpec, generate_dataset, generate_sequence, read_dataset
from .rng import Stream, mix
from .tensor import ConvSpec, Tensor
from .train import (
    AdamW,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "AdamW",
    "ConfigError",
    "ConvSpec",
    "DataError",
    "Dataset",
    "KERNEL_BACKEND",
    "LossConfig",
    "MetricAccumulator",
    "MetricReport",
    "ModelConfig",
    "MovingSpec",
    "NumericsError",
    "Stream",
    "StplError",
    "TapeError",
    "TemporalAttentionBlock",
    "Tensor",
    "TrainConfig",
    "VideoPredictor",
    "__version__",
    "ddr",
    "evaluate",
    "forward_difference",
    "generate_dataset",
    "generate_sequence",
    "load_checkpoint",
    "mae_frame",
    "mix",
    "mse_frame",
    "psnr_frame",
    "read_dataset",
    "save_checkpoint",
    "ssim_frame",
    "total_loss",
    "train",
]
