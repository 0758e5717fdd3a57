"""
End-to-end trend checks over many seeds: the sampling speedup of FedU on a
shared-optimum problem and the benefit of moderate eta for data-starved clients.
Deselect with -m "not slow".
"""
import numpy as np
import pytest

import config as app_config
from core import analysis, engine
from core import graph as graph_ops
from core.models import QuadraticModel
from tools.run import build_experiment
from tools.sweep import eta_sweep

pytestmark = pytest.mark.slow

SHARED_CENTER = np.array([1.0, -2.0, 0.5])
CUTOFF_ETAS = [1e-3, 1e-2, 1e-1, 1.0]


def _rounds_to_tol(sample_size, seed, n_clients=16):
    graph = graph_ops.ring_graph(n_clients)
    models = [QuadraticModel(SHARED_CENTER)] * n_clients
    config = engine.TrainConfig(local_lr=0.05, local_steps=1, rounds=800, eta=0.05, sample_size=sample_size,
                                batch_size=1, seed=seed, keep_iterates=True, eval_every=50)
    history = engine.run_fedu(graph, models, None, config)
    W_star = np.tile(SHARED_CENTER, (n_clients, 1))
    hit = analysis.convergence_metrics(history, W_star=W_star, tol=1e-4).rounds_to_tol
    assert hit is not None, f"S={sample_size}, seed={seed} did not reach 1e-4 in 800 rounds"
    return hit


def test_sampling_half_the_clients_roughly_doubles_rounds():
    half = np.mean([_rounds_to_tol(8, seed) for seed in range(20)])
    full = np.mean([_rounds_to_tol(16, seed) for seed in range(20)])
    assert 1.5 <= half / full <= 2.5


def _cutoff_spec(seed):
    return app_config.parse_config({
        "seed": seed,
        "eval_every": 1000,
        "dataset": {"n_clients": 20, "n_features": 10, "n_classes": 10, "labels_per_client": 2,
                    "samples_mean": 60, "samples_std": 20, "client_shift": 1.0, "class_sep": 1.0,
                    "cutoff": {"fraction_of_clients": 0.5, "keep_fraction": 0.1}},
        "graph": {"generator": "complete", "weights": {"scenario": "equal", "value": 0.5}},
        "model": {"kind": "mlr", "l2_alpha": 1e-4},
        "train": {"local_lr": 0.02, "local_steps": 5, "rounds": 200, "batch_size": 20},
    })


def test_moderate_eta_helps_cut_clients():
    beats_local, strong_is_worse = 0, 0
    best_cut, local_cut = [], []
    for seed in range(10):
        exp = build_experiment(_cutoff_spec(seed))
        rows = eta_sweep(exp, CUTOFF_ETAS, include_global=False)
        by_eta = {r["eta"]: r["cut_test_acc"] for r in rows if r["setting"] != "Local"}
        local = next(r["cut_test_acc"] for r in rows if r["setting"] == "Local")
        best = max(by_eta.values())
        beats_local += best > local
        strong_is_worse += by_eta[1.0] < best
        best_cut.append(best)
        local_cut.append(local)
    assert beats_local >= 8
    assert np.mean(best_cut) > np.mean(local_cut)
    assert strong_is_worse >= 6
