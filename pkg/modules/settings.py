"""
Settings Module
Layered configuration: config/defaults.json < user config file (TOML or JSON)
< environment (.env via python-dotenv) < command-line overrides.
"""
import copy
import json
import os
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dotenv import load_dotenv

from modules.errors import ConfigError
from utils import safe_save_json

logger = logging.getLogger(__name__)

# Define path relative to project root
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULTS_FILE = os.path.join(BASE_DIR, "config", "defaults.json")

# environment variable -> (settings key, parser)
ENV_KEYS = {
    "SMC_THREADS": ("threads", int),
    "SMC_OUT_DIR": ("out", str),
    "SMC_LOG_LEVEL": ("log_level", str),
}


def deep_merge(base: dict, override: dict) -> dict:
    """Recursive merge; nested dicts merge, everything else is replaced."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        elif ext == ".json":
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        else:
            raise ConfigError(f"unsupported config format '{ext}' (use .toml or .json)")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a table of settings")
    _resolve_paths(data, os.path.dirname(os.path.abspath(path)))
    return data


PATH_KEYS = ("pdb", "potential", "dihedrals", "closure")


def _resolve_paths(data: dict, base_dir: str) -> None:
    """Input paths in the protein block are relative to the config file."""
    protein = data.get("protein")
    if isinstance(protein, dict):
        for key in PATH_KEYS:
            value = protein.get(key)
            if isinstance(value, str) and value and not os.path.isabs(value):
                protein[key] = os.path.normpath(os.path.join(base_dir, value))


def environment_overrides(env_file: str = ".env") -> dict:
    if env_file and os.path.exists(env_file):
        load_dotenv(env_file, override=False)
    overrides = {}
    for var, (key, parse) in ENV_KEYS.items():
        raw = os.environ.get(var)
        if raw in (None, ""):
            continue
        try:
            overrides[key] = parse(raw)
        except ValueError:
            raise ConfigError(f"environment variable {var}={raw!r} is not a valid {parse.__name__}")
    return overrides


class SettingsManager:
    def __init__(self, config_path=None, overrides=None, env_file=".env", defaults_path=DEFAULTS_FILE):
        self.config_path = config_path
        self.settings = self.load_settings(config_path, overrides or {}, env_file, defaults_path)

    def load_settings(self, config_path, overrides, env_file, defaults_path):
        if not os.path.exists(defaults_path):
            raise ConfigError(f"defaults file missing: {defaults_path}")
        with open(defaults_path, "r", encoding="utf-8") as f:
            settings = json.load(f)
        if config_path:
            settings = deep_merge(settings, load_config_file(config_path))
            logger.info(f"configuration loaded from {config_path}")
        settings = deep_merge(settings, environment_overrides(env_file))
        cli = {k: v for k, v in overrides.items() if v is not None}
        return deep_merge(settings, cli)

    def save_settings(self, path):
        return safe_save_json(path, self.settings)

    def get(self, key, default=None):
        """Dotted keys reach into nested sections, e.g. get('chain.horizon')."""
        node = self.settings
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key, value):
        parts = key.split(".")
        node = self.settings
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value

    def section(self, key) -> dict:
        value = self.get(key, {})
        if not isinstance(value, dict):
            raise ConfigError(f"'{key}' must be a table of settings")
        return copy.deepcopy(value)
