"""Shared fixtures: one small end-to-end training run reused across tests."""
import numpy as np
import pytest

from cbforest.config import RunConfig
from cbforest.ensemble import run_cbf
from cbforest.synth import write_synthetic


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small synthetic screening dataset on disk (continuous labels)."""
    d = tmp_path_factory.mktemp("data")
    path = d / "train.svm"
    ds, threshold = write_synthetic(str(path), n=600, n_features=64,
                                    pos_rate=0.08, signal=12, seed=31)
    return {"path": str(path), "threshold": threshold, "dataset": ds,
            "dir": str(d)}


def tiny_config_dict(data, **overrides):
    cfg = {
        "train_path": data["path"],
        "label": {"kinds": ["binary", "continuous"],
                  "file_label": "continuous",
                  "threshold": data["threshold"]},
        "H": 2,
        "K": 3,
        "seed": 11,
        # EF at a 1% fraction is too coarse to rank rounds on folds this
        # small; AUC keeps the early stopping informative
        "stop_metric": {"kind": "auc_roc"},
        "max_rounds": 60,
        "patience": 20,
        "workers": 1,
        "output_dir": data["dir"],
    }
    cfg.update(overrides)
    return cfg


# One human-readable verdict line per acceptance criterion, echoed into the
# terminal summary so a run's pass/fail record is visible at a glance.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_run(tiny_dataset):
    """A completed dual-label CBF run shared by structure/persistence tests."""
    config = RunConfig.from_dict(tiny_config_dict(tiny_dataset))
    return config, run_cbf(config)
