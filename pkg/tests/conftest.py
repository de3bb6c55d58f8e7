"""Shared fixtures: the desk-scale training runs reused across test modules.

The desk runs are expensive (minutes each), so they are session-scoped and
built lazily; only tests that request them pay for them. All runs share one
generated dataset and one seed so their results are directly comparable.
"""

from __future__ import annotations

import csv
import os

import pytest

from stpl import cli

DESK_EPOCHS = 50
DESK_SEED = 0

_DESK_INI = """\
[model]
frames_in = 5
frames_out = 5
hidden_spatial = 16
hidden_temporal = 32
num_tau_blocks = 2
downsample_factor = 2

[train]
epochs = 50
batch_size = 16
lr = 0.01
weight_decay = 0.05
warmup_frac = 0.1
seed = 0

[loss]
alpha = 0.05

[data]
num_digits = 1
canvas = 32
digit_size = 16
seq_len = 10
speed_min = 0.5
speed_max = 1.5
train_count = 512
test_count = 8
seed = 0
"""


def run_cli(argv) -> int:
    code = cli.main(argv)
    assert code == 0, f"cli {argv} exited with {code}"
    return code


def read_run_log(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="session")
def desk_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("desk-config") / "desk.ini"
    path.write_text(_DESK_INI)
    return str(path)


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory, desk_config_path):
    """Shared desk-scale dataset files (train.dat / test.dat)."""
    out = tmp_path_factory.mktemp("desk-data")
    run_cli(["generate-data", "--config", desk_config_path, "--out", str(out)])
    return {"train": str(out / "train.dat"), "test": str(out / "test.dat")}


def _desk_train(tmp_path_factory, desk_config_path, desk_data, name, extra_sets):
    out = tmp_path_factory.mktemp(name)
    argv = ["train", "--config", desk_config_path, "--out", str(out),
            "--set", f"paths.dataset={desk_data['train']}",
            "--set", f"paths.test_dataset={desk_data['test']}"]
    for item in extra_sets:
        argv += ["--set", item]
    run_cli(argv)
    log_path = os.path.join(str(out), "run_log.csv")
    return {
        "out": str(out),
        "config": desk_config_path,
        "log_path": log_path,
        "history": read_run_log(log_path),
        "last": os.path.join(str(out), "last.ckpt"),
    }


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory, desk_config_path, desk_data):
    """The criterion-4 run: full model, full loss, 50 epochs."""
    return _desk_train(tmp_path_factory, desk_config_path, desk_data, "desk-full", [])


@pytest.fixture(scope="session")
def desk_run_repeat(tmp_path_factory, desk_config_path, desk_data):
    """Identical re-run of desk_run for the reproducibility criterion."""
    return _desk_train(tmp_path_factory, desk_config_path, desk_data, "desk-full-b", [])


@pytest.fixture(scope="session")
def desk_run_no_ddr(tmp_path_factory, desk_config_path, desk_data):
    return _desk_train(tmp_path_factory, desk_config_path, desk_data, "desk-noddr",
                       ["loss.ddr_enabled=false"])


@pytest.fixture(scope="session")
def desk_run_baseline(tmp_path_factory, desk_config_path, desk_data):
    return _desk_train(tmp_path_factory, desk_config_path, desk_data, "desk-base",
                       ["model.ablation=conv_baseline"])


@pytest.fixture
def criterion(request):
    """Emits one visible pass/fail line per acceptance criterion."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        if reporter is not None:
            reporter.write_line(line)
        else:
            print(line, flush=True)
        assert ok, line

    return emit
