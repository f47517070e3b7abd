#!/usr/bin/env python3
import os
import json
import logging

import pandas as pd

from src.loadConfig import config_lines
from src.spikeDiagnostics import METRIC_COLUMNS

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.9g"
SWEEP_COLUMNS = ["th_init", "final_accuracy", "best_accuracy", "final_dead_pct_layer1", "epochs_to_target"]


def header_lines(hp, extra=None):
    """Comment lines recording the fully resolved config (plus any extra facts)."""
    lines = [f"# {line}" for line in config_lines(hp)]
    for key, value in (extra or {}).items():
        lines.append(f"# {key} = {value}")
    return lines


def start_metrics_csv(path, hp, extra=None):
    """
    Create a metrics CSV holding only the config comment block and the column header.

    Args:
        path: Output file
        hp: Resolved hyperparameters of the run
        extra: Additional `# key = value` lines (e.g. the initial weight fingerprint)

    Returns:
        The path written
    """
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in header_lines(hp, extra):
            f.write(line + "\n")
        f.write(",".join(METRIC_COLUMNS) + "\n")
    return path


def metrics_dataframe(history):
    rows = [row for metrics in history for row in metrics.rows()]
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def append_metrics(path, metrics):
    """Append one (epoch, split) block, one row per layer."""
    df = metrics_dataframe([metrics])
    df.to_csv(path, mode="a", header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_metrics_csv(path):
    return pd.read_csv(path, comment="#")


def read_header(path):
    """The `# key = value` comment block at the top of a CSV, as strings."""
    header = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            content = line[1:].strip()
            if "=" in content:
                key, value = content.split("=", 1)
                header[key.strip()] = value.strip()
    return header


def write_sweep_csv(path, rows, hp):
    """One row per threshold grid point."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in header_lines(hp, {"mode": "sweep-th"}):
            f.write(line + "\n")
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Sweep results saved to {path}")
    return path


def write_ablation_csv(path, runs, fingerprint):
    """
    Concatenate per-run metrics files into one table with an lr_th column.

    Args:
        path: Output file
        runs: lr_th -> metrics CSV path
        fingerprint: Shared initial-weight fingerprint
    """
    frames = []
    for lr_th, metrics_path in runs.items():
        df = read_metrics_csv(metrics_path)
        df.insert(0, "lr_th", lr_th)
        frames.append(df)
    combined = pd.concat(frames, ignore_index=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# init_fingerprint = {fingerprint}\n")
        combined.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Ablation results saved to {path}")
    return path


def save_json_output(data, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
    logger.info(f"JSON output saved to {path}")
    return path
