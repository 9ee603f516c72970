import json
import os
import shutil
import subprocess
import tempfile
import logging
from datetime import datetime

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s | %(levelname)s | %(message)s'


class NumpyEncoder(json.JSONEncoder):
    """JSON encoder for numpy scalars/arrays, timestamps and non-finite floats."""

    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return _finite_or_none(float(obj))
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, np.ndarray):
            return _scrub(obj.tolist())
        if isinstance(obj, (pd.Timestamp, datetime)):
            return obj.strftime("%Y-%m-%d %H:%M:%S")
        if isinstance(obj, (set, tuple)):
            return list(obj)
        return super().default(obj)


def _finite_or_none(value: float):
    return value if np.isfinite(value) else None


def _scrub(data):
    """Replace NaN/inf floats by None so the output stays strict JSON."""
    if isinstance(data, float):
        return _finite_or_none(data)
    if isinstance(data, dict):
        return {k: _scrub(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [_scrub(v) for v in data]
    return data


def safe_save_json(path, data):
    """
    Saves a dictionary to a JSON file atomically.
    Writes to a temp file first, then renames it to the target path.
    """
    dir_name = os.path.dirname(path)
    if dir_name and not os.path.exists(dir_name):
        os.makedirs(dir_name)

    temp_path = None
    try:
        fd, temp_path = tempfile.mkstemp(dir=dir_name or None, suffix='.tmp')
        with os.fdopen(fd, 'w', encoding='utf-8') as f:
            json.dump(_scrub(data), f, indent=4, ensure_ascii=False, cls=NumpyEncoder, allow_nan=False)
        shutil.move(temp_path, path)
        return True
    except Exception as e:
        logger.error(f"Error saving JSON to {path}: {e}")
        if temp_path and os.path.exists(temp_path):
            try:
                os.remove(temp_path)
            except OSError:
                pass
        return False


def safe_load_json(path, default=None):
    """Reads a JSON sidecar; a missing or unreadable file yields `default` ({} if None)."""
    fallback = {} if default is None else default
    if not os.path.isfile(path):
        return fallback
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError:
        logger.warning(f"Corrupt JSON in {path}, ignoring it")
    except OSError as e:
        logger.error(f"Cannot read {path}: {e}")
    return fallback


def timestamp():
    return datetime.now().strftime('%Y%m%d_%H%M%S')


def configure_logging(log_dir, level="INFO"):
    """Log to <log_dir>/run_YYYYmmdd_HHMMSS.log and to the console. Returns the log file path."""
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, f"run_{timestamp()}.log")
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler()
        ],
        force=True
    )
    return log_file


def git_hash(repo_dir=None):
    """Short commit hash of the working tree, or None outside a git checkout."""
    repo_dir = repo_dir or os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=repo_dir, capture_output=True, text=True, timeout=5, check=True,
        )
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None
