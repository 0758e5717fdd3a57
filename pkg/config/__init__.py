"""
Run Configuration
Loads a run file into a RunSpec. .json files are read as JSON, anything else with
yaml.safe_load; .env and FEDLAP_* environment variables override file values.
Unknown keys are rejected with their dotted path.
"""
import copy
import json
import logging
import os
from dataclasses import dataclass, field

import psutil
import yaml
from dotenv import load_dotenv

from core.errors import InvalidConfig

load_dotenv()

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/latest",
    "eval_every": None,
    "workers": 1,
    "dataset": {
        "source": "synthetic",
        "n_clients": 20,
        "n_features": 10,
        "n_classes": 10,
        "labels_per_client": 2,
        "samples_mean": 60,
        "samples_std": 20,
        "client_shift": 0.5,
        "class_sep": 1.0,
        "train_fraction": 0.75,
        "path": None,
        "cutoff": None,
    },
    "graph": {
        "file": None,
        "generator": "complete",
        "edge_prob": 0.3,
        "weight": 1.0,
        "weights": {
            "scenario": "none",
            "value": 0.5,
            "c_small": 0.0,
            "c_mixed": 0.5,
            "c_full": 1.0,
        },
    },
    "model": {
        "kind": "mlr",
        "l2_alpha": 1e-3,
        "hidden": [20],
        "dim": 2,
        "curvature": 1.0,
        "centers": None,
        "center_scale": 1.0,
    },
    "train": {
        "local_lr": 0.01,
        "local_steps": 5,
        "rounds": 200,
        "eta": 0.01,
        "sample_size": None,
        "batch_size": 20,
        "mode": "centralized",
        "avg_alpha": None,
        "sampled_neighbors_only": False,
        "keep_iterates": False,
    },
}

CUTOFF_DEFAULTS = {"fraction_of_clients": 0.5, "keep_fraction": 0.1}

SOURCES = ("synthetic", "csv", "none")
GENERATORS = ("complete", "ring", "erdos_renyi", "star", "empty")
SCENARIOS = ("none", "random", "equal", "weighted", "similar")
MODEL_KINDS = ("quadratic", "mlr", "mlp")
MODES = ("centralized", "decentralized")


@dataclass
class RunSpec:
    seed: int
    output_dir: str
    eval_every: object
    workers: int
    dataset: dict
    graph: dict
    model: dict
    train: dict
    source_path: str = None
    raw: dict = field(default_factory=dict, repr=False)

    def train_kwargs(self):
        """Keyword arguments for core.engine.TrainConfig."""
        return dict(self.train, seed=self.seed, eval_every=self.eval_every, workers=self.workers)


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        raise InvalidConfig(f"'{path or 'root'}' must be an object, got {type(given).__name__}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        dotted = f"{path}.{key}" if path else key
        if key not in defaults:
            raise InvalidConfig(f"Unknown config key '{dotted}'")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, dotted)
        else:
            out[key] = value
    return out


def _number(conf, key, path, low=None, integer=False, allow_none=False, low_open=False, high=None,
            high_open=False):
    value = conf[key]
    dotted = f"{path}.{key}" if path else key
    if value is None and allow_none:
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)) or (integer and not isinstance(value, int)):
        kind = "an integer" if integer else "a number"
        raise InvalidConfig(f"'{dotted}' must be {kind}, got {value!r}")
    if low is not None and (value <= low if low_open else value < low):
        raise InvalidConfig(f"'{dotted}' must be {'>' if low_open else '>='} {low}, got {value}")
    if high is not None and (value >= high if high_open else value > high):
        raise InvalidConfig(f"'{dotted}' must be {'<' if high_open else '<='} {high}, got {value}")


def _numeric_rows(value):
    if not isinstance(value, list):
        return False
    return all(isinstance(row, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in row)
               for row in value)


def _choice(conf, key, path, options):
    if conf[key] not in options:
        raise InvalidConfig(f"'{path}.{key}' must be one of {list(options)}, got {conf[key]!r}")


def _resolve_path(value, base_dir):
    if value is None or os.path.isabs(value):
        return value
    return os.path.normpath(os.path.join(base_dir, value))


def _validate(conf, base_dir):
    _number(conf, "seed", "", low=0, integer=True)
    _number(conf, "eval_every", "", low=1, integer=True, allow_none=True)
    _number(conf, "workers", "", low=0, integer=True)

    ds = conf["dataset"]
    _choice(ds, "source", "dataset", SOURCES)
    _number(ds, "n_clients", "dataset", low=1, integer=True)
    if ds["source"] == "synthetic":
        for key in ("n_features", "n_classes", "labels_per_client"):
            _number(ds, key, "dataset", low=1, integer=True)
        _number(ds, "samples_mean", "dataset", low=4)
        for key in ("samples_std", "client_shift", "class_sep"):
            _number(ds, key, "dataset", low=0)
    _number(ds, "train_fraction", "dataset", low=0, low_open=True)
    if ds["source"] == "csv":
        if not ds["path"]:
            raise InvalidConfig("'dataset.path' is required when dataset.source is 'csv'")
        ds["path"] = _resolve_path(ds["path"], base_dir)
        if not os.path.exists(ds["path"]):
            raise InvalidConfig(f"Dataset file not found: {ds['path']}")
    if ds["cutoff"] is not None:
        ds["cutoff"] = _merge(CUTOFF_DEFAULTS, ds["cutoff"], "dataset.cutoff")
        _number(ds["cutoff"], "fraction_of_clients", "dataset.cutoff", low=0, high=1, low_open=True)
        _number(ds["cutoff"], "keep_fraction", "dataset.cutoff", low=0, high=1, low_open=True, high_open=True)

    gr = conf["graph"]
    if gr["file"] is not None:
        gr["file"] = _resolve_path(gr["file"], base_dir)
        if not os.path.exists(gr["file"]):
            raise InvalidConfig(f"Graph file not found: {gr['file']}")
    _choice(gr, "generator", "graph", GENERATORS)
    _number(gr, "edge_prob", "graph", low=0, high=1)
    _number(gr, "weight", "graph", low=0)
    _choice(gr["weights"], "scenario", "graph.weights", SCENARIOS)
    for key in ("value", "c_small", "c_mixed", "c_full"):
        _number(gr["weights"], key, "graph.weights", low=0)

    md = conf["model"]
    _choice(md, "kind", "model", MODEL_KINDS)
    _number(md, "l2_alpha", "model", low=0)
    _number(md, "dim", "model", low=1, integer=True)
    _number(md, "curvature", "model", low=0)
    _number(md, "center_scale", "model", low=0)
    if md["centers"] is not None and not _numeric_rows(md["centers"]):
        raise InvalidConfig(f"'model.centers' must be a list of numeric rows, got {md['centers']!r}")
    if not isinstance(md["hidden"], list) or not all(isinstance(h, int) and h >= 1 for h in md["hidden"]):
        raise InvalidConfig(f"'model.hidden' must be a list of positive integers, got {md['hidden']!r}")
    if md["kind"] != "quadratic" and ds["source"] == "none":
        raise InvalidConfig(f"model.kind '{md['kind']}' needs a dataset (dataset.source is 'none')")

    tr = conf["train"]
    _number(tr, "local_lr", "train", low=0)
    _number(tr, "local_steps", "train", low=1, integer=True)
    _number(tr, "rounds", "train", low=0, integer=True)
    _number(tr, "eta", "train", low=0)
    _number(tr, "sample_size", "train", low=1, integer=True, allow_none=True)
    _number(tr, "batch_size", "train", low=1, integer=True)
    _number(tr, "avg_alpha", "train", low=0, low_open=True, allow_none=True)
    _choice(tr, "mode", "train", MODES)


def _env_overrides(conf):
    seed = os.getenv('FEDLAP_SEED')
    if seed:
        try:
            conf["seed"] = int(seed)
        except ValueError:
            raise InvalidConfig(f"FEDLAP_SEED must be an integer, got {seed!r}")
        logging.info(f"Seed overridden from environment: {conf['seed']}")
    workers = os.getenv('FEDLAP_WORKERS')
    if workers:
        try:
            conf["workers"] = int(workers)
        except ValueError:
            raise InvalidConfig(f"FEDLAP_WORKERS must be an integer, got {workers!r}")


def resolve_workers(workers):
    """0 means one thread per physical core."""
    if workers == 0:
        return psutil.cpu_count(logical=False) or 1
    return workers


def parse_config(raw, base_dir='.', source_path=None):
    """Builds a RunSpec from an already-loaded mapping."""
    conf = _merge(DEFAULTS, raw or {}, "")
    _env_overrides(conf)
    _validate(conf, base_dir)
    conf["workers"] = resolve_workers(conf["workers"])
    return RunSpec(seed=conf["seed"], output_dir=conf["output_dir"], eval_every=conf["eval_every"],
                   workers=conf["workers"], dataset=conf["dataset"], graph=conf["graph"],
                   model=conf["model"], train=conf["train"], source_path=source_path, raw=conf)


def load_config(path):
    """Reads and validates a run file. Relative file references resolve against the file's directory."""
    if not os.path.exists(path):
        raise InvalidConfig(f"Config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            # YAML 1.1 reads exponent floats without a dot (1e-3) as strings
            raw = json.load(f) if path.endswith('.json') else yaml.safe_load(f)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise InvalidConfig(f"Error parsing configuration file {path}: {e}") from e
    spec = parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)), source_path=path)
    logging.info(f"Config loaded: {path} (seed={spec.seed}, model={spec.model['kind']}, "
                 f"mode={spec.train['mode']})")
    return spec
