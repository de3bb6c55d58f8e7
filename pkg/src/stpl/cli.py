"""Command-line orchestration: data generation, training, evaluation,
prediction, and the ablation grid.

One INI-style config file drives everything; --set section.key=value
overrides individual entries, --seed pins both the data and training seeds,
and --out picks the run directory. Every command materializes the fully
resolved config as <out>/config.ini before doing any work, so a run is
reproducible from that file plus the dataset.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import sys
from dataclasses import dataclass

import numpy as np

from .data import (
    Dataset,
    MovingSpec,
    generate_dataset,
    load_mnist_idx,
    synthetic_digit_bank,
    write_pgm,
)
from .errors import ConfigError, DataError, NumericsError
from .loss import LossConfig
from .model import ABLATIONS, ModelConfig, VideoPredictor
from .train import (
    TrainConfig,
    derive_model_seed,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    split_indices,
    train,
)
from .metrics import save_report
from .tensor import Tensor

TEST_SEED_OFFSET = 0x7E57FACE  # test sets live in a disjoint seed namespace

_MASK64 = 0xFFFFFFFFFFFFFFFF

# section -> key -> (kind, default); kinds: int, float, bool, str
_SCHEMA = {
    "model": {
        "in_channels": ("int", 1),
        "frames_in": ("int", 10),
        "frames_out": ("int", 10),
        "hidden_spatial": ("int", 32),
        "hidden_temporal": ("int", 64),
        "num_tau_blocks": ("int", 4),
        "dw_kernel": ("int", 5),
        "dwd_kernel": ("int", 7),
        "dwd_dilation": ("int", 3),
        "se_reduction": ("int", 4),
        "downsample_factor": ("int", 4),
        "ablation": ("str", "full"),
        "norm_groups": ("int", 8),
    },
    "train": {
        "epochs": ("int", 50),
        "batch_size": ("int", 16),
        "lr": ("float", 0.01),
        "weight_decay": ("float", 0.05),
        "schedule": ("str", "cosine"),
        "warmup_frac": ("float", 0.05),
        "val_fraction": ("float", 0.1),
        "clip_norm": ("float", 0.0),
        "seed": ("int", 0),
    },
    "loss": {
        "alpha": ("float", 0.1),
        "tau": ("float", 0.1),
        "ddr_enabled": ("bool", True),
    },
    "data": {
        "num_digits": ("int", 2),
        "canvas": ("int", 64),
        "digit_size": ("int", 28),
        "seq_len": ("int", 20),
        "speed_min": ("float", 2.0),
        "speed_max": ("float", 5.0),
        "seed": ("int", 0),
        "train_count": ("int", 10000),
        "test_count": ("int", 10000),
        "digits_idx": ("str", ""),
        "digits_per_class": ("int", 1),
    },
    "paths": {
        "dataset": ("str", ""),
        "test_dataset": ("str", ""),
        "checkpoint": ("str", ""),
    },
    "predict": {
        "horizon": ("int", 0),  # 0 means the model's native frames_out
        "count": ("int", 1),
    },
    "eval": {
        "horizon": ("int", 0),
        "split": ("str", "test"),  # test | val
    },
}


def _coerce(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {where} = {raw!r} as {kind}") from None


def _format(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: dict  # section -> key -> typed value
    out_dir: str

    @staticmethod
    def load(config_path, overrides, seed, out_dir) -> "RunConfig":
        values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in _SCHEMA.items()}
        if config_path:
            if not os.path.exists(config_path):
                raise ConfigError(f"config file not found: {config_path}")
            parser = configparser.ConfigParser(interpolation=None)
            parser.optionxform = str
            try:
                parser.read(config_path)
            except configparser.Error as e:
                raise ConfigError(f"cannot parse config file {config_path}: {e}") from None
            for section in parser.sections():
                if section not in _SCHEMA:
                    raise ConfigError(
                        f"unknown config section [{section}] (known: {sorted(_SCHEMA)})"
                    )
                for key, raw in parser.items(section):
                    if key not in _SCHEMA[section]:
                        raise ConfigError(
                            f"unknown config key {section}.{key} "
                            f"(known keys: {sorted(_SCHEMA[section])})"
                        )
                    kind = _SCHEMA[section][key][0]
                    values[section][key] = _coerce(kind, raw, f"{section}.{key}")
        for item in overrides or []:
            key_part, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"--set needs key=value, got {item!r}")
            section, dot, key = key_part.strip().partition(".")
            if not dot:
                raise ConfigError(f"--set keys are dotted section.key, got {key_part!r}")
            key = key.strip()
            if section not in _SCHEMA or key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            kind = _SCHEMA[section][key][0]
            values[section][key] = _coerce(kind, raw, f"{section}.{key}")
        if seed is not None:
            values["train"]["seed"] = seed
            values["data"]["seed"] = seed
        return RunConfig(values=values, out_dir=out_dir or "stpl-run")

    def get(self, section: str, key: str):
        return self.values[section][key]

    def with_values(self, updates: dict, out_dir=None) -> "RunConfig":
        values = {s: dict(keys) for s, keys in self.values.items()}
        for (section, key), value in updates.items():
            values[section][key] = value
        return RunConfig(values=values, out_dir=out_dir or self.out_dir)

    def render(self) -> str:
        lines = []
        for section, keys in _SCHEMA.items():
            lines.append(f"[{section}]")
            for key, (kind, _) in keys.items():
                lines.append(f"{key} = {_format(kind, self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.render().encode()).hexdigest()

    def echo(self) -> None:
        """Write the resolved config into the run directory (pre-execution)."""
        os.makedirs(self.out_dir, exist_ok=True)
        with open(os.path.join(self.out_dir, "config.ini"), "w") as f:
            f.write(self.render())

    # -- typed views --------------------------------------------------------

    def model_config(self) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(**m)

    def loss_config(self) -> LossConfig:
        return LossConfig(**self.values["loss"])

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(loss=self.loss_config(), **t)

    def moving_spec(self, seed=None) -> MovingSpec:
        d = self.values["data"]
        return MovingSpec(
            num_digits=d["num_digits"], canvas=d["canvas"], digit_size=d["digit_size"],
            seq_len=d["seq_len"], speed_min=d["speed_min"], speed_max=d["speed_max"],
            seed=d["seed"] if seed is None else seed,
        )

    # -- resolved paths -----------------------------------------------------

    def dataset_path(self) -> str:
        return self.get("paths", "dataset") or os.path.join(self.out_dir, "train.dat")

    def test_dataset_path(self) -> str:
        return self.get("paths", "test_dataset") or os.path.join(self.out_dir, "test.dat")

    def checkpoint_path(self) -> str:
        explicit = self.get("paths", "checkpoint")
        if explicit:
            return explicit
        best = os.path.join(self.out_dir, "best.ckpt")
        if os.path.exists(best):
            return best
        return os.path.join(self.out_dir, "last.ckpt")


def _require_file(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"required file not found: {path} ({hint})")
    return path


def _digit_pool(rc: RunConfig):
    idx_path = rc.get("data", "digits_idx")
    if idx_path:
        _require_file(
            idx_path,
            "expected an IDX3 image file such as train-images-idx3-ubyte; "
            "leave data.digits_idx empty to use the built-in synthetic digits",
        )
        return load_mnist_idx(idx_path)
    return synthetic_digit_bank(per_class=rc.get("data", "digits_per_class"),
                                seed=rc.get("data", "seed"))


def _open_model(rc: RunConfig):
    path = _require_file(rc.checkpoint_path(), "train first, or set paths.checkpoint")
    model, _, epoch, _ = load_checkpoint(path, rc.model_config())
    return model, path, epoch


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate_data(rc: RunConfig) -> int:
    digits = _digit_pool(rc)
    jobs = (
        (rc.dataset_path(), rc.get("data", "train_count"), rc.get("data", "seed")),
        (rc.test_dataset_path(), rc.get("data", "test_count"),
         (rc.get("data", "seed") + TEST_SEED_OFFSET) & _MASK64),
    )
    for path, count, seed in jobs:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        spec = rc.moving_spec(seed=seed)
        header = generate_dataset(spec, count, path, digits)
        print(
            f"wrote {path}: sequences={header.shape[0]} shape={header.shape} "
            f"bytes={header.header_bytes + header.payload_bytes} seed={seed}"
        )
    return 0


def cmd_train(rc: RunConfig, resume: bool) -> int:
    data_path = _require_file(rc.dataset_path(), "run generate-data first, or set paths.dataset")
    dataset = Dataset(data_path)
    tcfg = rc.train_config()
    model = VideoPredictor(rc.model_config(), seed=derive_model_seed(tcfg.seed))
    result = train(dataset, model, tcfg, rc.out_dir, resume=resume)
    for stats in result.history:
        print(
            f"epoch={stats.epoch} train_loss={stats.train_loss:.6f} "
            f"val_mse={stats.val_mse:.6f} val_ssim={stats.val_ssim:.6f} "
            f"lr={stats.lr:.6f}"
        )
    print(
        f"done: best_epoch={result.best_epoch} best_val_mse={result.best_val_mse:.6f} "
        f"last={result.last_path} best={result.best_path or result.last_path}"
    )
    return 0


def cmd_evaluate(rc: RunConfig) -> int:
    model, ckpt_path, _ = _open_model(rc)
    split = rc.get("eval", "split")
    if split not in ("test", "val"):
        raise ConfigError(f"eval.split must be 'test' or 'val', got {split!r}")
    horizon = rc.get("eval", "horizon") or None
    tcfg = rc.train_config()
    if split == "val":
        dataset = Dataset(_require_file(rc.dataset_path(), "the training dataset is needed "
                                        "for eval.split=val"))
        _, indices = split_indices(len(dataset), tcfg.val_fraction, tcfg.seed)
    else:
        dataset = Dataset(_require_file(rc.test_dataset_path(),
                                        "run generate-data first, or set paths.test_dataset"))
        indices = None
    report = evaluate(dataset, model, horizon=horizon, indices=indices,
                      batch_size=tcfg.batch_size)
    save_report(report, os.path.join(rc.out_dir, "metrics.txt"),
                os.path.join(rc.out_dir, "metrics_frames.csv"))
    print(f"checkpoint={ckpt_path} split={split} sequences={report.sequences} "
          f"frames={report.frames}")
    print(f"mse={report.mse!r}")
    print(f"mae={report.mae!r}")
    print(f"ssim={report.ssim!r}")
    print(f"psnr={report.psnr!r}")
    return 0


def cmd_predict(rc: RunConfig) -> int:
    model, ckpt_path, _ = _open_model(rc)
    cfg = model.config
    dataset = Dataset(_require_file(rc.test_dataset_path(),
                                    "run generate-data first, or set paths.test_dataset"))
    count = rc.get("predict", "count")
    if count < 1:
        raise ConfigError(f"predict.count must be >= 1, got {count}")
    count = min(count, len(dataset))
    horizon = rc.get("predict", "horizon") or cfg.frames_out
    length = dataset.shape[1]
    future_len = length - cfg.frames_in
    if future_len < 1:
        raise DataError(
            f"dataset sequences have {length} frames, shorter than frames_in + 1"
        )
    print(f"checkpoint={ckpt_path} horizon={horizon} sequences={count}")
    for n in range(count):
        seq = dataset.sequence(n)  # [L, C, H, W]
        past = Tensor(np.ascontiguousarray(seq[None, :cfg.frames_in]))
        target = seq[cfg.frames_in:]
        pred = model.predict_recursive(past, horizon).data[0]
        seq_dir = os.path.join(rc.out_dir, f"seq_{n:04d}")
        os.makedirs(seq_dir, exist_ok=True)
        for i in range(horizon):
            write_pgm(os.path.join(seq_dir, f"frame_{i:04d}.pgm"), pred[i, 0])
        overlap = min(horizon, future_len)
        diffs = [np.abs(pred[i, 0].astype(np.float64) -
                        target[i, 0].astype(np.float64)) for i in range(overlap)]
        write_pgm(os.path.join(seq_dir, "diff_strip.pgm"), np.concatenate(diffs, axis=1))
        print(f"wrote {seq_dir}: {horizon} frames + diff strip over {overlap} frames")
    return 0


ABLATION_VARIANTS = (
    ("full", "full", True),
    ("no_ddr", "full", False),
    ("no_sa", "no_sa", True),
    ("no_da", "no_da", True),
    ("conv_baseline", "conv_baseline", True),
)


def cmd_ablate(rc: RunConfig) -> int:
    data_path = _require_file(rc.dataset_path(), "run generate-data first, or set paths.dataset")
    rows = []
    for name, ablation, ddr_enabled in ABLATION_VARIANTS:
        sub = rc.with_values(
            {("model", "ablation"): ablation, ("loss", "ddr_enabled"): ddr_enabled},
            out_dir=os.path.join(rc.out_dir, name),
        )
        sub.echo()
        dataset = Dataset(data_path)
        tcfg = sub.train_config()
        model = VideoPredictor(sub.model_config(), seed=derive_model_seed(tcfg.seed))
        result = train(dataset, model, tcfg, sub.out_dir)
        final = result.history[-1]
        rows.append((name, ablation, ddr_enabled, final.val_mse, sub.digest()))
        print(f"variant={name} val_mse={final.val_mse!r}")
    table_path = os.path.join(rc.out_dir, "ablation.csv")
    with open(table_path, "w") as f:
        f.write("variant,ablation,ddr_enabled,val_mse,config_hash\n")
        for name, ablation, ddr_enabled, val_mse, digest in rows:
            flag = "true" if ddr_enabled else "false"
            f.write(f"{name},{ablation},{flag},{val_mse!r},{digest}\n")
    print(f"wrote {table_path}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="INI config file")
    shared.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override a config entry (dotted section.key)")
    shared.add_argument("--seed", type=int, help="set both train.seed and data.seed")
    shared.add_argument("--out", metavar="DIR", help="run directory (default stpl-run)")

    parser = argparse.ArgumentParser(
        prog="stpl",
        description="Spatiotemporal video prediction: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", parents=[shared],
                   help="synthesize train/test datasets")
    p_train = sub.add_parser("train", parents=[shared], help="train a model")
    p_train.add_argument("--resume", action="store_true",
                         help="continue from last.ckpt in the run directory")
    sub.add_parser("evaluate", parents=[shared], help="compute metrics for a checkpoint")
    sub.add_parser("predict", parents=[shared],
                   help="write predicted frames as PGM files")
    sub.add_parser("ablate", parents=[shared], help="train the five-variant ablation grid")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        rc = RunConfig.load(args.config, args.set, args.seed, args.out)
        rc.echo()
        if args.command == "generate-data":
            return cmd_generate_data(rc)
        if args.command == "train":
            return cmd_train(rc, resume=args.resume)
        if args.command == "evaluate":
            return cmd_evaluate(rc)
        if args.command == "predict":
            return cmd_predict(rc)
        if args.command == "ablate":
            return cmd_ablate(rc)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
