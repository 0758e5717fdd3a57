"""
Run Command
Turns a RunSpec into graph, client models and data, executes one FedU/dFedU run
and writes history.csv + summary.json. Also hosts gen-data.
"""
import logging
import os
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import psutil

import config as app_config
from core import analysis, data, engine, seeding, storage
from core import graph as graph_ops
from core.errors import FedLapError, InvalidConfig, NonFiniteParameter
from core.models import MLPModel, MLRModel, QuadraticModel

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


@dataclass
class Experiment:
    graph: graph_ops.ClientGraph
    models: list
    dataset: Optional[data.FederatedDataset]
    config: engine.TrainConfig
    server_vertex: bool = False

    @property
    def cut_clients(self):
        return () if self.dataset is None else self.dataset.cut_clients


# --- Assembly ---
def build_dataset(spec):
    ds = spec.dataset
    if ds["source"] == "none":
        return None
    if ds["source"] == "csv":
        # CSV bundles carry their own train/test split
        dataset = data.load_csv(ds["path"])
    else:
        dataset = data.generate_synthetic(
            n_clients=ds["n_clients"], n_features=ds["n_features"], n_classes=ds["n_classes"],
            labels_per_client=ds["labels_per_client"], samples_mean=ds["samples_mean"],
            samples_std=ds["samples_std"], seed=spec.seed, client_shift=ds["client_shift"],
            class_sep=ds["class_sep"], train_fraction=ds["train_fraction"],
        )
    if ds["cutoff"]:
        dataset = data.apply_cutoff(dataset, seed=spec.seed, **ds["cutoff"])
    return dataset


def _base_graph(spec, n_clients):
    gr = spec.graph
    if gr["file"]:
        graph = graph_ops.load_graph(gr["file"])
        if graph.n_clients != n_clients:
            raise InvalidConfig(f"Graph file {gr['file']} has {graph.n_clients} vertices, "
                                f"expected {n_clients} clients")
        return graph
    kind = gr["generator"]
    if kind == "complete":
        return graph_ops.complete_graph(n_clients, gr["weight"])
    if kind == "ring":
        return graph_ops.ring_graph(n_clients, gr["weight"])
    if kind == "erdos_renyi":
        return graph_ops.erdos_renyi_graph(n_clients, gr["edge_prob"], seed=spec.seed, weight=gr["weight"])
    if kind == "star":
        return graph_ops.star_graph(n_clients, gr["weight"])
    return graph_ops.build_graph(n_clients, [])


def build_graph(spec, dataset, n_clients):
    """Structural graph plus the configured weight scenario."""
    graph = _base_graph(spec, n_clients)
    w = spec.graph["weights"]
    scenario = w["scenario"]
    if scenario == "none":
        return graph
    if spec.graph["generator"] == "star" and not spec.graph["file"]:
        raise InvalidConfig("Weight scenarios apply to client graphs, not the star reduction")
    if scenario == "random":
        return graph_ops.assign_weights(graph, graph_ops.RandomWeights(seed=spec.seed))
    if scenario == "equal":
        return graph_ops.assign_weights(graph, graph_ops.EqualWeights(value=w["value"]))
    if scenario == "weighted":
        if dataset is None or not dataset.cut_clients:
            raise InvalidConfig("The 'weighted' scenario needs cut-off clients (dataset.cutoff)")
        return graph_ops.assign_weights(graph, graph_ops.SizeWeights(
            small_set=frozenset(dataset.cut_clients), c_small=w["c_small"],
            c_mixed=w["c_mixed"], c_full=w["c_full"]))
    label_sets = None if dataset is None else dataset.label_sets
    return graph_ops.assign_weights(graph, graph_ops.SimilarLabelWeights(label_sets=label_sets))


def quadratic_centers(spec, n_clients):
    md = spec.model
    if md["centers"] is not None:
        centers = np.asarray(md["centers"], dtype=float)
        if centers.shape != (n_clients, md["dim"]):
            raise InvalidConfig(f"'model.centers' must have shape ({n_clients}, {md['dim']}), "
                                f"got {centers.shape}")
        return centers
    rng = seeding.derive_rng(spec.seed, seeding.CENTERS)
    return rng.normal(scale=md["center_scale"], size=(n_clients, md["dim"]))


def build_models(spec, dataset, n_clients):
    md = spec.model
    if md["kind"] == "quadratic":
        return [QuadraticModel(c, md["curvature"]) for c in quadratic_centers(spec, n_clients)]
    if md["kind"] == "mlr":
        model = MLRModel(dataset.n_features, dataset.n_classes, md["l2_alpha"])
    else:
        model = MLPModel([dataset.n_features, *md["hidden"], dataset.n_classes], md["l2_alpha"])
    # models are stateless, one instance serves every client
    return [model] * n_clients


def build_experiment(spec):
    dataset = build_dataset(spec)
    n_clients = spec.dataset["n_clients"] if dataset is None else dataset.n_clients
    models = build_models(spec, dataset, n_clients)
    graph = build_graph(spec, dataset, n_clients)
    server_vertex = graph.n_clients == n_clients + 1 and spec.graph["generator"] == "star" \
        and not spec.graph["file"]
    if server_vertex:
        models, dataset = engine.attach_server_vertex(models, dataset)
    config = engine.TrainConfig(**spec.train_kwargs())
    return Experiment(graph=graph, models=models, dataset=dataset, config=config, server_vertex=server_vertex)


# --- Reporting ---
def log_resources(label):
    proc = psutil.Process(os.getpid())
    rss = proc.memory_info().rss / (1024 ** 2)
    cpu = proc.cpu_times()
    logging.info(f"📊 {label}: RSS {rss:.1f} MB, CPU time {cpu.user + cpu.system:.2f}s")


def run_summary(exp, history):
    """summary.json payload: final metrics plus run context and oracle distances where available."""
    config = exp.config
    extra = {
        "n_clients": exp.graph.n_clients,
        "n_edges": len(exp.graph.edges),
        "rho": exp.graph.rho,
        "graph_connected": exp.graph.connected,
        "step_size_product": config.global_lr * config.eta * exp.graph.rho,
        "mode": config.mode,
        "seed": config.seed,
        "server_vertex": exp.server_vertex,
    }
    if exp.cut_clients:
        extra["cut_clients"] = list(exp.cut_clients)
        extra["final_cut_test_acc"] = history.mean_test_acc(clients=exp.cut_clients)
    if all(isinstance(m, QuadraticModel) for m in exp.models):
        centers, curv = analysis.quadratic_instance(exp.models)
        try:
            W_star = analysis.solve_quadratic_optimum(exp.graph, centers, curv, config.eta)
            extra["distance_to_optimum"] = float(np.linalg.norm(history.final_params - W_star))
        except FedLapError as e:
            logging.warning(f"⚠️ No closed-form optimum: {e}")
    if config.avg_alpha is not None and config.keep_iterates:
        W_avg = engine.weighted_output(history, config, exp.graph.n_clients)
        extra["weighted_output_objective"] = engine.evaluate(
            exp.graph, exp.models, exp.dataset, W_avg, config.eta)["objective"]
    return storage.history_summary(history, extra)


def execute(exp, out_dir):
    """Runs one experiment and writes its outputs; returns the history."""
    history = engine.run(exp.graph, exp.models, exp.dataset, exp.config)
    storage.write_history(history, out_dir)
    storage.write_summary(run_summary(exp, history), out_dir)
    return history


def cmd_run(config_path):
    """fedlap run <config>"""
    started = time.perf_counter()
    try:
        spec = app_config.load_config(config_path)
        exp = build_experiment(spec)
        execute(exp, spec.output_dir)
    except NonFiniteParameter as e:
        logging.error(f"❌ Run diverged: {e}")
        return EXIT_DIVERGED
    except FedLapError as e:
        logging.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    log_resources("Run resources")
    logging.info(f"✅ Run complete in {time.perf_counter() - started:.2f}s, outputs in {spec.output_dir}")
    return EXIT_OK


def cmd_gen_data(config_path):
    """fedlap gen-data <config>: writes data.csv, dataset_stats.json and graph.json."""
    try:
        spec = app_config.load_config(config_path)
        dataset = build_dataset(spec)
        if dataset is None:
            raise InvalidConfig("gen-data needs dataset.source 'synthetic' or 'csv'")
        graph = build_graph(spec, dataset, dataset.n_clients)
        out_dir = storage.ensure_dir(spec.output_dir)
        data.save_csv(dataset, os.path.join(out_dir, "data.csv"))
        storage.write_json(dataset.statistics(), os.path.join(out_dir, "dataset_stats.json"))
        graph_ops.save_graph(graph, os.path.join(out_dir, "graph.json"))
    except FedLapError as e:
        logging.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    logging.info(f"✅ Dataset bundle written to {out_dir}")
    return EXIT_OK
