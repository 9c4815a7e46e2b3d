import numpy as np
import pytest

from taskjscc.config import load_config
from taskjscc.experiment import run_all

ACCEPTANCE_LINES: list[str] = []

TINY = {
    "dims": {"l": 12, "d": 4, "k": 4},
    "dataset": {"n_train": 1024, "n_test": 256},
    "networks": {"encoder_hidden": [24], "reshaper_hidden": [24], "agent_hidden": 32},
    "agent": {"steps": 1500, "input_shrink": 2.0, "mse_threshold": 0.05},
    "channel": {"eval_snr_db": [0.0, 10.0]},
    "mc": {"omega": 32},
    "schedule": {"pretrain_steps": 60, "finetune_steps": 30, "log_every": 10},
}


@pytest.fixture
def tiny_cfg(tmp_path):
    return load_config(TINY, {"output": {"dir": str(tmp_path / "run")}})


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One full run of both modes at the default configuration."""
    root = tmp_path_factory.mktemp("default_run")
    cfg = load_config(overrides={"output": {"dir": str(root)}})
    rows = run_all(cfg)
    return cfg, root, rows


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
