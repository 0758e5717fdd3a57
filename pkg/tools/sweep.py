"""
Sweep Commands
sweep-eta: the same run under several regularization strengths plus the Local (eta = 0)
and Global (one pooled model) baselines, repeated over consecutive seeds.
sweep-weights: the same run under each edge-weight scenario.
"""
import copy
import logging
import os
from dataclasses import replace

import numpy as np

import config as app_config
from core import engine, storage
from core.errors import FedLapError, InvalidConfig, MissingLabelSets, NonFiniteParameter
from tools.run import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, build_experiment, log_resources

SWEEP_COLUMNS = ["setting", "eta", "repeats", "mean_test_acc", "std_test_acc",
                 "cut_test_acc", "std_cut_test_acc", "final_objective"]
RUN_COLUMNS = ["setting", "eta", "seed", "mean_test_acc", "cut_test_acc", "final_objective"]
WEIGHT_COLUMNS = ["scenario", "rho", "mean_test_acc", "cut_test_acc", "final_objective"]
WEIGHT_SCENARIOS = ("random", "equal", "weighted", "similar")


def parse_etas(text):
    try:
        etas = [float(x) for x in text.split(',') if x.strip()]
    except ValueError:
        raise InvalidConfig(f"--etas must be a comma-separated list of numbers, got {text!r}")
    if not etas:
        raise InvalidConfig("--etas needs at least one value")
    if any(not e >= 0 for e in etas):
        raise InvalidConfig(f"eta values must be non-negative, got {etas}")
    return etas


def _label(config, eta):
    return f"{'FedU' if config.mode == engine.CENTRALIZED else 'dFedU'} eta={eta:g}"


def eta_sweep(exp, etas, include_global=True):
    """
    One pass over the eta grid on a built experiment.
    Returns a list of dicts (setting, eta, mean_test_acc, cut_test_acc, final_objective).
    """
    results = []
    grid = [(eta, None) for eta in etas] + [(0.0, "Local")]
    for eta, name in grid:
        config = engine.with_eta(exp.config, eta)
        setting = name or _label(config, eta)
        history = engine.run(exp.graph, exp.models, exp.dataset, config)
        row = {
            "setting": setting,
            "eta": eta,
            "mean_test_acc": history.mean_test_acc(),
            "cut_test_acc": history.mean_test_acc(clients=exp.cut_clients) if exp.cut_clients else np.nan,
            "final_objective": history.objective[-1],
        }
        logging.info(f"Sweep entry {setting}: acc={row['mean_test_acc']:.4f}, cut acc={row['cut_test_acc']:.4f}")
        results.append(row)

    if include_global:
        real = [m for m in exp.models if m.uses_data]
        if not real:
            logging.warning("⚠️ Global baseline skipped: needs data-driven client models")
        else:
            result = engine.run_global(real[0], exp.dataset, exp.config)
            cut = result.mean_test_acc(exp.cut_clients) if exp.cut_clients else np.nan
            results.append({"setting": "Global", "eta": np.nan, "mean_test_acc": result.mean_test_acc(),
                            "cut_test_acc": cut, "final_objective": result.train_loss})
            logging.info(f"Sweep entry Global: acc={result.mean_test_acc():.4f}, cut acc={cut:.4f}")
    return results


def _std(values):
    values = np.asarray(values, dtype=float)
    if np.all(np.isnan(values)):
        return np.nan
    return float(np.nanstd(values))


def _mean(values):
    values = np.asarray(values, dtype=float)
    if np.all(np.isnan(values)):
        return np.nan
    return float(np.nanmean(values))


def aggregate(runs):
    """Mean/std over repeats per setting, in first-seen setting order."""
    order = list(dict.fromkeys(r["setting"] for r in runs))
    rows = []
    for setting in order:
        mine = [r for r in runs if r["setting"] == setting]
        rows.append({
            "setting": setting,
            "eta": mine[0]["eta"],
            "repeats": len(mine),
            "mean_test_acc": _mean([r["mean_test_acc"] for r in mine]),
            "std_test_acc": _std([r["mean_test_acc"] for r in mine]),
            "cut_test_acc": _mean([r["cut_test_acc"] for r in mine]),
            "std_cut_test_acc": _std([r["cut_test_acc"] for r in mine]),
            "final_objective": _mean([r["final_objective"] for r in mine]),
        })
    return rows


def cmd_sweep_eta(config_path, etas, repeats=1):
    """fedlap sweep-eta <config> --etas ... [--repeats k]; seeds are seed+0..seed+k-1."""
    try:
        if repeats < 1:
            raise InvalidConfig(f"--repeats must be >= 1, got {repeats}")
        etas = parse_etas(etas) if isinstance(etas, str) else list(etas)
        spec = app_config.load_config(config_path)
        runs = []
        for rep in range(repeats):
            seed = spec.seed + rep
            logging.info(f"Sweep repeat {rep + 1}/{repeats} (seed={seed})")
            exp = build_experiment(replace(spec, seed=seed))
            for row in eta_sweep(exp, etas):
                runs.append(dict(row, seed=seed))
        out_dir = spec.output_dir
        storage.write_table(aggregate(runs), SWEEP_COLUMNS, os.path.join(out_dir, "sweep.csv"))
        storage.write_table(runs, RUN_COLUMNS, os.path.join(out_dir, "sweep_runs.csv"))
    except NonFiniteParameter as e:
        logging.error(f"❌ Sweep diverged: {e}")
        return EXIT_DIVERGED
    except FedLapError as e:
        logging.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    log_resources("Sweep resources")
    logging.info(f"✅ Sweep complete: {len(etas)} eta values x {repeats} repeats")
    return EXIT_OK


def cmd_sweep_weights(config_path):
    """fedlap sweep-weights <config>: Random / Equal / Weighted / Similar edge weights."""
    try:
        spec = app_config.load_config(config_path)
        rows = []
        for scenario in WEIGHT_SCENARIOS:
            variant = copy.deepcopy(spec)
            variant.graph["weights"]["scenario"] = scenario
            try:
                exp = build_experiment(variant)
            except (InvalidConfig, MissingLabelSets) as e:
                logging.warning(f"⚠️ Weight scenario '{scenario}' skipped: {e}")
                continue
            history = engine.run(exp.graph, exp.models, exp.dataset, exp.config)
            cut = history.mean_test_acc(clients=exp.cut_clients) if exp.cut_clients else np.nan
            rows.append({"scenario": scenario, "rho": exp.graph.rho, "mean_test_acc": history.mean_test_acc(),
                         "cut_test_acc": cut, "final_objective": history.objective[-1]})
            logging.info(f"Weight scenario {scenario}: acc={history.mean_test_acc():.4f}, cut acc={cut:.4f}")
        storage.write_table(rows, WEIGHT_COLUMNS, os.path.join(spec.output_dir, "weights_sweep.csv"))
    except NonFiniteParameter as e:
        logging.error(f"❌ Sweep diverged: {e}")
        return EXIT_DIVERGED
    except FedLapError as e:
        logging.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    logging.info(f"✅ Weight sweep complete: {len(rows)} scenarios")
    return EXIT_OK
