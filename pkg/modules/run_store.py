"""
Run Store Module
Persistence of experiment runs: one directory per invocation holding the long
results table, timings, summaries, an optional Excel workbook and a JSON sidecar.
"""
import os
import logging
from datetime import datetime

import pandas as pd

from utils import git_hash, safe_load_json, safe_save_json, timestamp

logger = logging.getLogger(__name__)

VERSION = "1.0.0"
RESULT_SCHEMA_VERSION = 2

RESULTS_FILE = "results.csv"
TIMINGS_FILE = "timings.csv"
SIDECAR_FILE = "run.json"
EXCEL_FILE = "summary.xlsx"


# ==================== RUN DIRECTORIES ====================

def new_run_dir(out_root, experiment, name=None):
    """Create <out_root>/<name or experiment-timestamp>, suffixing -2, -3 on collision."""
    base = name or f"{experiment}_{timestamp()}"
    path = os.path.join(out_root, base)
    n = 2
    while os.path.exists(path):
        path = os.path.join(out_root, f"{base}-{n}")
        n += 1
    os.makedirs(path)
    return path


def _write_csv(frame, path):
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def save_run(run_dir, experiment, config_echo, results=None, timings=None, summaries=None,
             diagnostics=None, excel=False):
    """
    Writes every artifact of one run and returns {artifact: path}.
    `summaries` maps a short name to a DataFrame; each becomes <name>.csv.
    """
    os.makedirs(run_dir, exist_ok=True)
    written = {}
    if results is not None:
        written["results"] = _write_csv(results, os.path.join(run_dir, RESULTS_FILE))
    if timings is not None:
        written["timings"] = _write_csv(timings, os.path.join(run_dir, TIMINGS_FILE))
    for name, frame in (summaries or {}).items():
        written[name] = _write_csv(frame, os.path.join(run_dir, f"{name}.csv"))

    if excel and summaries:
        path = os.path.join(run_dir, EXCEL_FILE)
        try:
            with pd.ExcelWriter(path, engine="openpyxl") as writer:
                for name, frame in summaries.items():
                    frame.to_excel(writer, index=False, sheet_name=name[:31])
            written["excel"] = path
        except Exception as e:
            logger.error(f"Error writing Excel summary {path}: {e}")

    sidecar = {
        "experiment": experiment,
        "version": VERSION,
        "results_schema": RESULT_SCHEMA_VERSION,
        "git_hash": git_hash(),
        "timestamp": datetime.now(),
        "config": config_echo,
        "artifacts": {k: os.path.basename(v) for k, v in written.items()},
        "diagnostics": diagnostics or {},
    }
    sidecar_path = os.path.join(run_dir, SIDECAR_FILE)
    if safe_save_json(sidecar_path, sidecar):
        written["sidecar"] = sidecar_path
    logger.info(f"run saved to {run_dir} ({len(written)} files)")
    return written


# ==================== HISTORY ====================

def load_run_history(out_root) -> pd.DataFrame:
    """
    Lists the runs saved under out_root, newest first.
    Directories without a readable sidecar are skipped.
    """
    columns = ["run", "experiment", "timestamp", "seed", "model", "version", "git_hash", "status"]
    if not os.path.isdir(out_root):
        return pd.DataFrame(columns=columns)
    rows = []
    for entry in sorted(os.listdir(out_root)):
        run_dir = os.path.join(out_root, entry)
        sidecar = safe_load_json(os.path.join(run_dir, SIDECAR_FILE))
        if not os.path.isdir(run_dir) or not sidecar:
            continue
        config = sidecar.get("config") or {}
        rows.append({
            "run": entry,
            "experiment": sidecar.get("experiment"),
            "timestamp": sidecar.get("timestamp"),
            "seed": config.get("seed"),
            "model": config.get("model"),
            "version": sidecar.get("version"),
            "git_hash": sidecar.get("git_hash"),
            "status": (sidecar.get("diagnostics") or {}).get("status", "ok"),
        })
    history = pd.DataFrame(rows, columns=columns)
    return history.sort_values("timestamp", ascending=False, kind="stable").reset_index(drop=True)


def load_run(run_dir):
    """Sidecar plus every CSV artifact of a saved run, as DataFrames."""
    sidecar = safe_load_json(os.path.join(run_dir, SIDECAR_FILE))
    frames = {}
    for name, filename in (sidecar.get("artifacts") or {}).items():
        path = os.path.join(run_dir, filename)
        if filename.endswith(".csv") and os.path.exists(path):
            frames[name] = pd.read_csv(path)
    return sidecar, frames
