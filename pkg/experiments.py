"""
Experiments Module
Drivers for the three experiment designs:
- variance of the estimates against M at a fixed budget MN
- convergence of the RMSE against N, with an importance sampling baseline
- Boltzmann averages of per-residue contacts along a protein segment

Every repetition draws from streams keyed by (seed, cell, repetition), so a
cell rerun on its own reproduces its rows exactly, at any thread count.
"""
import os
import re
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import resampling
from modules.errors import (
    AllParticlesDead,
    BudgetExhausted,
    ConfigError,
    OracleUnavailable,
)
from modules.rng import WORD, derive_seed
from protein_model import BackboneGeometry, ProteinSegmentModel, SegmentProblem, build_segment_problem
from smc_core import (
    SequentialModel,
    Statistic,
    enumerate_exact,
    estimate,
    run_importance_sampling,
    run_sisr,
    run_updown_smc,
    split_stability,
)
from structural_stats import CaDistanceStatistic, ContactStatistic, segment_contact_profile
from tables_io import load_energy_tables, parse_pdb
from toy_models import (
    STATISTIC_FACTORIES,
    ConstrainedGaussianChain,
    FiniteStateHMM,
    chain_statistics,
    hmm_statistics,
    state_count,
    state_indicator,
)

logger = logging.getLogger(__name__)

MODELS = ("toy-hmm", "constrained-chain", "protein")
PROTEIN_INPUTS = ("pdb", "potential", "dihedrals", "closure")

RESULT_COLUMNS = ["experiment", "method", "MN", "M", "N", "repetition", "statistic", "value", "died", "cost",
                  "runtime_s"]
TIMING_COLUMNS = ["experiment", "method", "MN", "M", "N", "repetition", "runtime_s"]


# ==================== CONFIGURATION ====================

def _positive_int(settings: dict, key: str) -> int:
    value = settings.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ConfigError(f"'{key}' must be a positive integer, got {value!r}")
    return int(value)


def _int_list(settings: dict, key: str) -> Tuple[int, ...]:
    values = settings.get(key)
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError(f"'{key}' must be a non-empty list of positive integers")
    return tuple(_positive_int({key: v}, key) for v in values)


def _section(settings: dict, key: str) -> dict:
    value = settings.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a table of settings")
    return dict(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated settings of one experiment invocation."""
    model: str
    seed: int
    threads: int = 1
    out: str = "runs"
    log_level: str = "INFO"
    excel: bool = False
    repetitions: int = 100
    statistics: Tuple[str, ...] = ()
    # variance design: every M of the grid is paired with N = MN / M
    MN: int = 10000
    M_grid: Tuple[int, ...] = (1, 5, 20, 100)
    sisr_scheme: str = "systematic"
    sisr_baseline: bool = True
    # convergence design and the single profile run share M
    M: int = 20
    N_grid: Tuple[int, ...] = (1000, 3000, 10000, 30000, 100000)
    N: int = 2000
    is_baseline: bool = True
    truth: Dict[str, Any] = field(default_factory=dict)
    contacts: Dict[str, Any] = field(default_factory=dict)
    hmm: Dict[str, Any] = field(default_factory=dict)
    chain: Dict[str, Any] = field(default_factory=dict)
    protein: Dict[str, Any] = field(default_factory=dict)
    geometry: Dict[str, Any] = field(default_factory=dict)
    synthetic: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_settings(cls, settings: dict) -> "ExperimentConfig":
        model = settings.get("model")
        if model not in MODELS:
            raise ConfigError(f"'model' must be one of {MODELS}, got {model!r}")
        seed = settings.get("seed")
        if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= seed < WORD:
            raise ConfigError(f"'seed' must be an integer in [0, 2**32), got {seed!r}")

        MN = _positive_int(settings, "MN")
        M_grid = _int_list(settings, "M_grid")
        bad = [M for M in M_grid if MN % M]
        if bad:
            raise ConfigError(f"M_grid values {bad} do not divide MN = {MN}; every cell needs M * N = MN")

        scheme = settings.get("sisr_scheme", "systematic")
        if scheme not in resampling.SISR_SCHEMES:
            raise ConfigError(f"'sisr_scheme' must be one of {resampling.SISR_SCHEMES}, got {scheme!r}")

        statistics = settings.get("statistics") or []
        if not isinstance(statistics, (list, tuple)) or not all(isinstance(s, str) for s in statistics):
            raise ConfigError("'statistics' must be a list of statistic names")

        truth = _section(settings, "truth")
        for key in ("samples", "max_draws", "split_repeats"):
            if key in truth:
                _positive_int(truth, key)
        contacts = _section(settings, "contacts")
        radius = contacts.get("radius", 7.0)
        if not isinstance(radius, (int, float)) or radius <= 0:
            raise ConfigError(f"'contacts.radius' must be positive, got {radius!r}")

        return cls(
            model=model,
            seed=int(seed),
            threads=_positive_int(settings, "threads"),
            out=str(settings.get("out") or "runs"),
            log_level=str(settings.get("log_level") or "INFO").upper(),
            excel=bool(settings.get("excel", False)),
            repetitions=_positive_int(settings, "repetitions"),
            statistics=tuple(statistics),
            MN=MN,
            M_grid=M_grid,
            sisr_scheme=scheme,
            sisr_baseline=bool(settings.get("sisr_baseline", True)),
            M=_positive_int(settings, "M"),
            N_grid=_int_list(settings, "N_grid"),
            N=_positive_int(settings, "N"),
            is_baseline=bool(settings.get("is_baseline", True)),
            truth=truth,
            contacts=contacts,
            hmm=_section(settings, "hmm"),
            chain=_section(settings, "chain"),
            protein=_section(settings, "protein"),
            geometry=_section(settings, "geometry"),
            synthetic=_section(settings, "synthetic"),
        )

    @property
    def variance_cells(self) -> List[Tuple[int, int]]:
        """(M, N) pairs of the variance design."""
        return [(M, self.MN // M) for M in self.M_grid]

    def echo(self) -> dict:
        return asdict(self)


# ==================== RESULT TABLE ====================

@dataclass
class ResultTable:
    """Long-format results: one row per (cell, repetition, statistic component)."""
    frame: pd.DataFrame

    @classmethod
    def from_rows(cls, rows: Sequence[dict]) -> "ResultTable":
        return cls(pd.DataFrame(list(rows), columns=RESULT_COLUMNS))

    def __len__(self) -> int:
        return len(self.frame)

    def deterministic_frame(self) -> pd.DataFrame:
        """Everything but wall time, so reruns with the same seed give identical bytes."""
        return self.frame.drop(columns=["runtime_s"]).reset_index(drop=True)

    def timings(self) -> pd.DataFrame:
        return self.frame[TIMING_COLUMNS].drop_duplicates().reset_index(drop=True)


@dataclass
class ExperimentOutcome:
    experiment: str
    results: ResultTable
    summaries: Dict[str, pd.DataFrame]
    diagnostics: Dict[str, Any]

    @property
    def all_died(self) -> bool:
        frame = self.results.frame
        return bool(len(frame)) and bool(frame["died"].all())


# ==================== MODELS & STATISTICS ====================

@dataclass
class ModelBundle:
    model: SequentialModel
    statistics: List[Statistic]
    problem: Optional[SegmentProblem] = None


_INDICATOR = re.compile(r"^x(\d+)==(\d+)$")
_COUNT = re.compile(r"^count_(\d+)$")
_CONTACTS = re.compile(r"^n\(CA(\d+)(?:\.\.(\d+))?\)$")
_DISTANCE = re.compile(r"^d\(CA(\d+),CA(\d+)\)$")


def toy_statistic(name: str) -> Statistic:
    if name in STATISTIC_FACTORIES:
        return STATISTIC_FACTORIES[name]()
    match = _INDICATOR.match(name)
    if match:
        return state_indicator(int(match.group(1)), int(match.group(2)))
    match = _COUNT.match(name)
    if match:
        return state_count(int(match.group(1)))
    raise ConfigError(f"unknown statistic '{name}'")


def protein_statistic(name: str, problem: SegmentProblem, radius: float, include_segment: bool) -> Statistic:
    if name == "contacts":
        return segment_contact_profile(problem, radius, include_segment)
    match = _CONTACTS.match(name)
    if match:
        first = int(match.group(1))
        last = int(match.group(2) or first)
        if last < first:
            raise ConfigError(f"empty residue range in statistic '{name}'")
        return ContactStatistic(problem, list(range(first, last + 1)), radius, include_segment)
    match = _DISTANCE.match(name)
    if match:
        return CaDistanceStatistic(problem, int(match.group(1)), int(match.group(2)))
    raise ConfigError(f"unknown protein statistic '{name}'")


def component_names(stat: Statistic) -> List[str]:
    """Row labels of a statistic's components; contact profiles get one per residue."""
    if isinstance(stat, ContactStatistic) and len(stat.residues) > 1:
        return [f"n(CA{r})" for r in stat.residues]
    return [stat.name]


def _require_inputs(protein: dict, error=ConfigError) -> Dict[str, str]:
    paths = {}
    for key in PROTEIN_INPUTS:
        path = protein.get(key)
        if not path:
            raise error(f"'protein.{key}' is not set")
        if not os.path.exists(path):
            raise error(f"protein.{key} file not found: {path}")
        paths[key] = path
    return paths


def build_model(config: ExperimentConfig) -> ModelBundle:
    if config.model == "toy-hmm":
        try:
            model = FiniteStateHMM.from_dict(config.hmm)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"invalid 'hmm' section: {e}")
        stats = [toy_statistic(s) for s in config.statistics] or hmm_statistics()
        return ModelBundle(model, stats)

    if config.model == "constrained-chain":
        try:
            model = ConstrainedGaussianChain.from_dict(config.chain)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid 'chain' section: {e}")
        stats = [toy_statistic(s) for s in config.statistics] or chain_statistics()
        return ModelBundle(model, stats)

    protein = config.protein
    paths = _require_inputs(protein)
    for key in ("start", "end"):
        if not isinstance(protein.get(key), int):
            raise ConfigError(f"'protein.{key}' must be a residue number")
    drop = tuple(protein.get("drop_elements", ("H",)))
    structure = parse_pdb(paths["pdb"], drop_elements=drop)
    tables = load_energy_tables(paths["potential"], paths["dihedrals"], paths["closure"],
                                strict_typing=bool(protein.get("strict_typing", False)))
    geometry = BackboneGeometry.from_dict(config.geometry)
    problem = build_segment_problem(structure, protein["start"], protein["end"], tables.potential,
                                    chain=protein.get("chain") or None, drop_elements=drop)
    model = ProteinSegmentModel(problem, tables, geometry, pair_method=protein.get("pair_method", "auto"))
    radius = float(config.contacts.get("radius", 7.0))
    include_segment = bool(config.contacts.get("include_segment", True))
    names = config.statistics or ("contacts",)
    stats = [protein_statistic(s, problem, radius, include_segment) for s in names]
    return ModelBundle(model, stats, problem)


# ==================== REPETITIONS ====================

@dataclass(frozen=True)
class _Task:
    method: str
    MN: int
    M: int
    N: int
    repetition: int
    seed: tuple


def _estimate_rows(experiment: str, task: _Task, ensemble, stats: Sequence[Statistic],
                   cost: int, runtime: float) -> List[dict]:
    rows = []
    for stat in stats:
        point = estimate(ensemble, stat).point
        for name, value in zip(component_names(stat), point):
            rows.append(_row(experiment, task, name, float(value), False, cost, runtime))
    return rows


def _dead_rows(experiment: str, task: _Task, stats: Sequence[Statistic], cost: int,
               runtime: float) -> List[dict]:
    return [_row(experiment, task, name, float("nan"), True, cost, runtime)
            for stat in stats for name in component_names(stat)]


def _row(experiment, task, statistic, value, died, cost, runtime) -> dict:
    return {
        "experiment": experiment, "method": task.method, "MN": task.MN, "M": task.M, "N": task.N,
        "repetition": task.repetition, "statistic": statistic, "value": value, "died": died,
        "cost": int(cost), "runtime_s": runtime,
    }


def _run_task(experiment: str, bundle: ModelBundle, task: _Task, scheme: str) -> List[dict]:
    """One repetition; `cost` counts the proposals the run made, dead runs included."""
    started = time.perf_counter()
    cost = 0
    try:
        if task.method == "updown":
            ensemble, diagnostics = run_updown_smc(bundle.model, task.N, task.M, task.seed)
            cost = diagnostics.cost
        elif task.method.startswith("sisr"):
            ensemble, diagnostics = run_sisr(bundle.model, task.N, scheme, task.seed)
            cost = diagnostics.cost
        else:
            try:
                samples, _ = run_importance_sampling(bundle.model, task.MN, task.MN, task.seed)
            except BudgetExhausted as e:
                samples = e.partial
            cost = samples.cost
            if samples.ensemble is None:
                raise AllParticlesDead(bundle.model.horizon)
            ensemble = samples.ensemble
    except AllParticlesDead as e:
        logger.warning(f"{experiment} {task.method} M={task.M} N={task.N} rep {task.repetition}: "
                       f"no particles left at step {e.step}")
        if e.diagnostics is not None:
            cost = e.diagnostics.cost
        return _dead_rows(experiment, task, bundle.statistics, cost, time.perf_counter() - started)
    return _estimate_rows(experiment, task, ensemble, bundle.statistics, cost, time.perf_counter() - started)


def _run_tasks(experiment: str, bundle: ModelBundle, tasks: Sequence[_Task], config: ExperimentConfig) -> ResultTable:
    logger.info(f"{experiment}: {len(tasks)} runs on {config.threads} thread(s)")
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        chunks = list(pool.map(lambda task: _run_task(experiment, bundle, task, config.sisr_scheme), tasks))
    return ResultTable.from_rows(row for rows in chunks for row in rows)


def _sisr_method(config: ExperimentConfig) -> str:
    return f"sisr-{config.sisr_scheme}"


# ==================== VARIANCE ====================

def variance_summary(results: ResultTable) -> pd.DataFrame:
    """Per cell and statistic: completed runs, deaths, mean and variance over completed runs (ddof 1)."""
    rows = []
    keys = ["method", "MN", "M", "N", "statistic"]
    for key, group in results.frame.groupby(keys, sort=False):
        values = group.loc[~group["died"], "value"].to_numpy(dtype=float)
        completed = values.size
        rows.append({
            **dict(zip(keys, key)),
            "n_runs": len(group),
            "died": int(group["died"].sum()),
            "n_completed": completed,
            "death_rate": float(group["died"].mean()),
            "mean_cost": float(group["cost"].mean()),
            "mean": float(values.mean()) if completed else float("nan"),
            "variance": float(values.var(ddof=1)) if completed >= 2 else float("nan"),
        })
    return pd.DataFrame(rows)


def run_variance_experiment(config: ExperimentConfig, bundle: Optional[ModelBundle] = None) -> ExperimentOutcome:
    """R seeded runs per (M, N = MN / M) cell; dead runs are counted and left out of the variance."""
    bundle = bundle or build_model(config)
    tasks = [
        _Task("updown", config.MN, M, N, rep, derive_seed(config.seed, config.MN, M, rep))
        for M, N in config.variance_cells
        for rep in range(config.repetitions)
    ]
    if config.sisr_baseline:
        tasks += [
            _Task(_sisr_method(config), config.MN, 1, config.MN, rep, derive_seed(config.seed, config.MN, 0, rep))
            for rep in range(config.repetitions)
        ]
    results = _run_tasks("variance", bundle, tasks, config)
    summary = variance_summary(results)
    for _, row in summary.iterrows():
        logger.info(f"variance {row['method']} M={row['M']} N={row['N']} {row['statistic']}: "
                    f"var={row['variance']:.4g} over {row['n_completed']} runs, {row['died']} died")
    return ExperimentOutcome("variance", results, {"summary": summary}, {"cells": config.variance_cells})


# ==================== CONVERGENCE ====================

def ground_truth(config: ExperimentConfig, bundle: ModelBundle) -> Tuple[Dict[str, float], Optional[pd.DataFrame]]:
    """Exact expectations when the model can be enumerated, large-budget importance sampling otherwise.

    Returns ({component: truth}, stability frame or None).
    """
    if config.model == "protein":
        _require_inputs(config.protein, OracleUnavailable)

    if config.model == "toy-hmm":
        truth = {}
        for stat in bundle.statistics:
            point = enumerate_exact(bundle.model, stat)
            truth.update(zip(component_names(stat), map(float, point)))
        return truth, None

    samples_target = int(config.truth.get("samples", 100000))
    max_draws = int(config.truth.get("max_draws", 50 * samples_target))
    repeats = int(config.truth.get("split_repeats", 10))
    try:
        samples, rate = run_importance_sampling(bundle.model, samples_target, max_draws,
                                                derive_seed(config.seed, 0), threads=config.threads)
    except BudgetExhausted as e:
        samples, rate = e.partial, e.acceptance_rate
        if samples.ensemble is None or samples.n_accepted < 2:
            raise OracleUnavailable(f"importance sampling accepted {samples.n_accepted} of {samples.n_drawn} draws")
        logger.warning(f"ground truth from {samples.n_accepted} samples, short of {samples_target}")
    logger.info(f"ground truth: {samples.n_accepted} samples, acceptance rate {rate:.4%}")

    truth = {}
    for stat in bundle.statistics:
        point = estimate(samples.ensemble, stat).point
        truth.update(zip(component_names(stat), map(float, point)))
    stability = split_stability(samples.ensemble, bundle.statistics, repeats, derive_seed(config.seed, 1))
    stability["acceptance_rate"] = rate
    return truth, stability


def rmse_summary(results: ResultTable, truth: Dict[str, float]) -> pd.DataFrame:
    rows = []
    keys = ["method", "M", "N", "statistic"]
    for key, group in results.frame.groupby(keys, sort=False):
        values = group.loc[~group["died"], "value"].to_numpy(dtype=float)
        target = truth.get(key[-1], float("nan"))
        errors = values - target
        rows.append({
            **dict(zip(keys, key)),
            "truth": target,
            "n_completed": values.size,
            "died": int(group["died"].sum()),
            "mean_cost": float(group["cost"].mean()),
            "bias": float(errors.mean()) if values.size else float("nan"),
            "rmse": float(np.sqrt(np.mean(errors ** 2))) if values.size else float("nan"),
        })
    return pd.DataFrame(rows)


def rmse_slopes(summary: pd.DataFrame) -> pd.DataFrame:
    """Least-squares slope of log RMSE against log N per method and statistic."""
    rows = []
    for (method, statistic), group in summary.groupby(["method", "statistic"], sort=False):
        ok = group[np.isfinite(group["rmse"]) & (group["rmse"] > 0)]
        slope = float("nan")
        if ok["N"].nunique() >= 2:
            slope = float(np.polyfit(np.log(ok["N"].to_numpy(dtype=float)),
                                     np.log(ok["rmse"].to_numpy(dtype=float)), 1)[0])
        rows.append({"method": method, "statistic": statistic, "n_points": len(ok), "slope": slope})
    return pd.DataFrame(rows)


def run_convergence_experiment(config: ExperimentConfig, bundle: Optional[ModelBundle] = None) -> ExperimentOutcome:
    """RMSE against N at fixed M, plus importance sampling at the matched draw budget M * N."""
    if config.model == "protein":
        _require_inputs(config.protein, OracleUnavailable)
    bundle = bundle or build_model(config)
    truth, stability = ground_truth(config, bundle)

    M = config.M
    tasks = [
        _Task("updown", M * N, M, N, rep, derive_seed(config.seed, N, M, rep))
        for N in config.N_grid
        for rep in range(config.repetitions)
    ]
    if config.is_baseline:
        tasks += [
            _Task("importance", M * N, M, N, rep, derive_seed(config.seed, N, 0, rep))
            for N in config.N_grid
            for rep in range(config.repetitions)
        ]
    results = _run_tasks("convergence", bundle, tasks, config)
    summary = rmse_summary(results, truth)
    slopes = rmse_slopes(summary)
    for _, row in slopes.iterrows():
        logger.info(f"convergence {row['method']} {row['statistic']}: log-log slope {row['slope']:.3f}")

    summaries = {"summary": summary, "slopes": slopes}
    if stability is not None:
        summaries["stability"] = stability
    return ExperimentOutcome("convergence", results, summaries, {"truth": truth})


# ==================== SEGMENT PROFILE ====================

def run_segment_profile(config: ExperimentConfig, bundle: Optional[ModelBundle] = None) -> ExperimentOutcome:
    """One run at (N, M); per-residue contact averages along the segment.

    AllParticlesDead propagates with the failing step.
    """
    if config.model != "protein":
        raise ConfigError("the segment profile needs model = 'protein'")
    bundle = bundle or build_model(config)
    problem = bundle.problem
    task = _Task("updown", config.M * config.N, config.M, config.N, 0,
                 derive_seed(config.seed, config.N, config.M, 0))

    started = time.perf_counter()
    ensemble, diagnostics = run_updown_smc(bundle.model, task.N, task.M, task.seed, threads=config.threads)
    runtime = time.perf_counter() - started

    radius = float(config.contacts.get("radius", 7.0))
    include_segment = bool(config.contacts.get("include_segment", True))
    profile_stat = segment_contact_profile(problem, radius, include_segment)
    report = estimate(ensemble, profile_stat)
    names = dict(zip(range(problem.start, problem.end + 2), problem.residue_names))
    profile = pd.DataFrame({
        "residue": profile_stat.residues,
        "residue_name": [names[r] for r in profile_stat.residues],
        "estimate": report.point,
        "n_particles": report.n_particles,
        "n_distinct": report.n_distinct,
        "ess": report.ess,
    })
    logger.info(f"profile {problem.chain}{problem.start}-{problem.end}: N={task.N} M={task.M}, "
                f"{report.n_distinct} distinct particles, ESS {report.ess:.1f}")

    results = ResultTable.from_rows(_estimate_rows("profile", task, ensemble, bundle.statistics,
                                                  diagnostics.cost, runtime))
    summaries = {"profile": profile, "steps": diagnostics.to_frame(include_timing=False)}
    return ExperimentOutcome("profile", results, summaries, diagnostics.as_dict())


EXPERIMENTS = {
    "variance": run_variance_experiment,
    "converge": run_convergence_experiment,
    "profile": run_segment_profile,
}
