"""
Command-line entry point.

    python main.py variance  --config config/chain_variance.toml
    python main.py converge  --config config/chain_converge.toml --threads 8
    python main.py profile   --config runs/synthetic/profile.toml
    python main.py gen-tables --out runs
    python main.py history   --out runs

Exit codes: 0 success, 1 other sampler error, 2 configuration or input error,
3 every run died.
"""
import argparse
import logging
import os
import sys

from experiments import EXPERIMENTS, ExperimentConfig
from modules.errors import AllParticlesDead, ConfigError, OracleUnavailable, SmcError, TableError
from modules.run_store import load_run_history, new_run_dir, save_run
from modules.settings import SettingsManager
from protein_model import BackboneGeometry
from tables_io import SyntheticTableSpec, generate_mini_protein, generate_synthetic_tables
from utils import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ALL_DIED = 3

PROFILE_CONFIG = "profile.toml"
MINI_PROTEIN = "mini_protein.pdb"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="updown-smc",
        description="Up/down-sampling sequential Monte Carlo experiments.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON settings file")
    common.add_argument("--seed", type=int, help="base seed of the run")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--name", help="run directory name (default: <experiment>_<timestamp>)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("variance", parents=[common], help="variance of the estimates against M at fixed MN")
    sub.add_parser("converge", parents=[common], help="RMSE against N with an importance sampling baseline")
    sub.add_parser("profile", parents=[common], help="per-residue contact averages along a segment")
    sub.add_parser("gen-tables", parents=[common], help="write synthetic tables, a mini-protein and profile.toml")
    sub.add_parser("history", parents=[common], help="list saved runs")
    return parser


def _settings(args) -> SettingsManager:
    overrides = {"seed": args.seed, "out": args.out, "threads": args.threads, "log_level": args.log_level}
    return SettingsManager(args.config, overrides=overrides)


# ==================== SUBCOMMANDS ====================

def run_experiment(command: str, config: ExperimentConfig, name=None) -> int:
    experiment = EXPERIMENTS[command]
    try:
        outcome = experiment(config)
    except AllParticlesDead as e:
        logger.error(f"{command}: all particles died at step {e.step}")
        run_dir = new_run_dir(config.out, command, name)
        diagnostics = e.diagnostics.as_dict() if e.diagnostics is not None else {}
        diagnostics["status"] = "died"
        save_run(run_dir, command, config.echo(), diagnostics=diagnostics)
        return EXIT_ALL_DIED

    diagnostics = dict(outcome.diagnostics)
    diagnostics["status"] = "died" if outcome.all_died else "ok"
    run_dir = new_run_dir(config.out, command, name)
    save_run(
        run_dir, command, config.echo(),
        results=outcome.results.deterministic_frame(),
        timings=outcome.results.timings(),
        summaries=outcome.summaries,
        diagnostics=diagnostics,
        excel=config.excel,
    )
    if outcome.all_died:
        logger.error(f"{command}: every run died")
        return EXIT_ALL_DIED
    logger.info(f"{command} finished: {len(outcome.results)} result rows in {run_dir}")
    return EXIT_OK


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return repr(value)


def write_profile_config(path: str, settings: dict) -> str:
    """Flat TOML writer for the generated profile config (scalars and one level of tables)."""
    lines = ["# written by gen-tables; paths are relative to this file"]
    tables = {k: v for k, v in settings.items() if isinstance(v, dict)}
    for key, value in settings.items():
        if not isinstance(value, dict):
            lines.append(f"{key} = {_toml_value(value)}")
    for table, values in tables.items():
        lines.append("")
        lines.append(f"[{table}]")
        for key, value in values.items():
            lines.append(f"{key} = {_toml_value(value)}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return path


def generate_tables(config: ExperimentConfig, name=None) -> int:
    synthetic = config.synthetic
    sequence = list(synthetic.get("sequence") or [])
    segment = synthetic.get("segment") or []
    if len(segment) != 2:
        raise ConfigError("'synthetic.segment' must be [start, end]")
    start, end = int(segment[0]), int(segment[1])
    if start < 2 or end + 2 > len(sequence):
        raise ConfigError(f"segment {start}-{end} needs residues {start - 1}..{end + 2} in a "
                          f"sequence of {len(sequence)}")
    try:
        spec = SyntheticTableSpec.from_dict(synthetic.get("tables") or {})
    except TypeError as e:
        raise ConfigError(f"invalid 'synthetic.tables' section: {e}")
    missing = sorted(set(sequence) - set(spec.amino_acids))
    if missing:
        raise ConfigError(f"sequence residues {missing} have no dihedral table")

    seed = int(synthetic.get("seed", config.seed))
    geometry = BackboneGeometry.from_dict(config.geometry)
    out_dir = os.path.join(config.out, name or "synthetic")
    files = generate_synthetic_tables(spec, seed, out_dir, geometry)
    generate_mini_protein(sequence, seed, os.path.join(out_dir, MINI_PROTEIN), geometry)

    profile = {
        "model": "protein",
        "seed": config.seed,
        "N": config.N,
        "M": config.M,
        "protein": {
            "pdb": MINI_PROTEIN,
            "potential": os.path.basename(files.potential),
            "dihedrals": os.path.basename(files.dihedrals),
            "closure": os.path.basename(files.closure),
            "chain": "A",
            "start": start,
            "end": end,
        },
    }
    if config.geometry:
        profile["geometry"] = dict(config.geometry)
    path = write_profile_config(os.path.join(out_dir, PROFILE_CONFIG), profile)
    logger.info(f"synthetic inputs ready: python main.py profile --config {path}")
    return EXIT_OK


def show_history(out_root: str) -> int:
    history = load_run_history(out_root)
    if history.empty:
        print(f"no runs under {out_root}")
    else:
        print(history.to_string(index=False))
    return EXIT_OK


# ==================== ENTRY POINT ====================

def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = _settings(args)
        config = ExperimentConfig.from_settings(settings.settings)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG

    if args.command == "history":
        return show_history(config.out)

    log_file = configure_logging(os.path.join(config.out, "logs"), config.log_level)
    logger.info(f"{args.command}: model={config.model} seed={config.seed} threads={config.threads} log={log_file}")
    try:
        if args.command == "gen-tables":
            return generate_tables(config, args.name)
        return run_experiment(args.command, config, args.name)
    except (ConfigError, OracleUnavailable, TableError, FileNotFoundError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_CONFIG
    except SmcError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
