"""
Shared fixtures: the two-client quadratic reference instance, small synthetic
classification data and a helper for writing run configs.
"""
import json

import numpy as np
import pytest

from core import data
from core import graph as graph_ops
from core.models import Batch, QuadraticModel


@pytest.fixture
def pair_graph():
    return graph_ops.build_graph(2, [(0, 1, 1.0)])


@pytest.fixture
def pair_models():
    return [QuadraticModel([0.0]), QuadraticModel([4.0])]


@pytest.fixture
def small_dataset():
    return data.generate_synthetic(n_clients=6, n_features=4, n_classes=3, labels_per_client=2,
                                   samples_mean=30, samples_std=5, seed=7)


@pytest.fixture
def random_batch():
    rng = np.random.default_rng(11)
    return Batch(rng.normal(size=(15, 4)), rng.integers(0, 3, size=15))


@pytest.fixture
def write_config(tmp_path):
    """Writes a run config dict to tmp_path and returns its path; output goes to tmp_path/out."""

    def _write(conf, name="run.json"):
        conf = dict(conf)
        conf.setdefault("output_dir", str(tmp_path / "out"))
        path = tmp_path / name
        path.write_text(json.dumps(conf), encoding='utf-8')
        return str(path)

    return _write


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    monkeypatch.delenv('FEDLAP_SEED', raising=False)
    monkeypatch.delenv('FEDLAP_WORKERS', raising=False)
    monkeypatch.setenv('FEDLAP_LOG_DIR', str(tmp_path / "logs"))


@pytest.fixture(autouse=True)
def _keep_pytest_log_capture(monkeypatch):
    """app.setup_logging() uses basicConfig(force=True), which drops pytest's
    caplog handlers from the root logger; re-attach them after it runs."""
    import logging

    import app

    original = app.setup_logging

    def _setup_logging():
        root = logging.getLogger()
        kept = [h for h in root.handlers if type(h).__module__ == "_pytest.logging"]
        original()
        for h in kept:
            if h not in root.handlers:
                root.addHandler(h)

    monkeypatch.setattr(app, "setup_logging", _setup_logging)
