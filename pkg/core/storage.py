"""
Run Output Storage
All files a run leaves behind go through here: history.csv, summary.json,
sweep tables and verification reports. Each run owns its output directory.
"""
import json
import logging
import math
import os

import numpy as np
import pandas as pd

HISTORY_COLUMNS = ["round", "objective", "mean_train_loss", "mean_test_acc", "drift", "disagreement"]


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(payload, path):
    ensure_dir(os.path.dirname(path) or '.')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_history(history, out_dir):
    """history.csv: one row per recorded round."""
    path = os.path.join(ensure_dir(out_dir), "history.csv")
    frame = pd.DataFrame(history.rows(), columns=HISTORY_COLUMNS)
    frame.to_csv(path, index=False, encoding='utf-8', lineterminator="\n")
    logging.info(f"History written: {path} ({len(frame)} rows)")
    return path


def read_history(path):
    return pd.read_csv(path, float_precision='round_trip')


def history_summary(history, extra=None):
    """Final-state summary; final_objective equals the last history.csv row."""
    summary = {
        "rounds_recorded": len(history),
        "final_round": history.rounds[-1],
        "final_objective": history.objective[-1],
        "final_mean_train_loss": history.mean_train_loss(),
        "final_mean_test_acc": history.mean_test_acc(),
        "final_drift": history.drift[-1],
        "final_disagreement": history.disagreement[-1],
        "final_grad_norm_sq": history.grad_norm_sq[-1],
        "min_grad_norm_sq": min(history.grad_norm_sq),
        "per_client_test_acc": history.test_acc[-1],
        "wall_time_s": history.wall_time[-1],
    }
    if extra:
        summary.update(extra)
    return summary


def write_summary(summary, out_dir, name="summary.json"):
    path = write_json(summary, os.path.join(ensure_dir(out_dir), name))
    logging.info(f"Summary written: {path}")
    return path


def write_table(rows, columns, path):
    """Generic CSV table (sweep results)."""
    ensure_dir(os.path.dirname(path) or '.')
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, encoding='utf-8', lineterminator="\n")
    logging.info(f"Table written: {path} ({len(frame)} rows)")
    return path
