import json
import math

import numpy as np
import pandas as pd
import pytest

import experiments
from experiments import (
    ExperimentConfig,
    ResultTable,
    build_model,
    component_names,
    ground_truth,
    protein_statistic,
    rmse_slopes,
    run_convergence_experiment,
    run_segment_profile,
    run_variance_experiment,
    toy_statistic,
    variance_summary,
)
from modules.errors import ConfigError, OracleUnavailable
from modules.settings import DEFAULTS_FILE, deep_merge
from smc_core import enumerate_exact
from structural_stats import CaDistanceStatistic, ContactStatistic
from toy_models import FiniteStateHMM, hmm_statistics


def _settings(**overrides):
    with open(DEFAULTS_FILE, encoding="utf-8") as f:
        defaults = json.load(f)
    return deep_merge(defaults, overrides)


def _config(**overrides):
    return ExperimentConfig.from_settings(_settings(**overrides))


def _protein_settings(synthetic_dir, **overrides):
    protein = {
        "pdb": synthetic_dir["pdb"], "potential": synthetic_dir["potential"],
        "dihedrals": synthetic_dir["dihedrals"], "closure": synthetic_dir["closure"],
        "chain": "A", "start": 4, "end": 9,
    }
    return dict(model="protein", N=40, M=5, protein=protein, **overrides)


SMALL_CHAIN = dict(chain={"horizon": 6}, MN=40, M_grid=[1, 4], repetitions=3)


# ==================== CONFIGURATION ====================

def test_defaults_are_valid():
    config = _config()
    assert config.model == "constrained-chain"
    assert config.variance_cells == [(1, 10000), (5, 2000), (20, 500), (100, 100)]
    assert config.echo()["M_grid"] == (1, 5, 20, 100)


@pytest.mark.parametrize("overrides", [
    {"model": "ising"},
    {"seed": -1},
    {"seed": 1.5},
    {"seed": 2 ** 32},
    {"threads": 0},
    {"repetitions": True},
    {"M_grid": [1, 3]},
    {"M_grid": []},
    {"sisr_scheme": "greedy"},
    {"statistics": "terminal"},
    {"truth": {"samples": 0}},
    {"contacts": {"radius": -2.0}},
    {"chain": "long"},
])
def test_invalid_settings(overrides):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_settings(_settings(**overrides))


def test_build_model_errors(tmp_path):
    with pytest.raises(ConfigError):
        build_model(_config(model="toy-hmm", hmm={"initial": [0.5, 0.6]}))
    with pytest.raises(ConfigError):
        build_model(_config(chain={"wobble": 1.0}))
    with pytest.raises(ConfigError):
        build_model(_config(model="protein"))
    with pytest.raises(ConfigError):
        build_model(_config(model="protein", protein={"pdb": str(tmp_path / "missing.pdb")}))
    with pytest.raises(ConfigError):
        build_model(_config(statistics=["median"]))


def test_protein_inputs_need_segment_bounds(synthetic_dir):
    settings = _protein_settings(synthetic_dir)
    settings["protein"]["start"] = None
    with pytest.raises(ConfigError):
        build_model(ExperimentConfig.from_settings(_settings(**settings)))


# ==================== STATISTIC NAMES ====================

def test_toy_statistic_names():
    assert toy_statistic("x2==1").name == "x2==1"
    assert toy_statistic("x2==1")((0, 0, 1))[0] == 1.0
    assert toy_statistic("count_0")((0, 1, 0))[0] == 2.0
    assert toy_statistic("max_abs").name == "max_abs"
    with pytest.raises(ConfigError):
        toy_statistic("x2=1")


def test_protein_statistic_names(segment_problem):
    contacts = protein_statistic("n(CA5..7)", segment_problem, 7.0, True)
    assert isinstance(contacts, ContactStatistic)
    assert contacts.residues == [5, 6, 7]
    assert component_names(contacts) == ["n(CA5)", "n(CA6)", "n(CA7)"]
    single = protein_statistic("n(CA6)", segment_problem, 7.0, True)
    assert component_names(single) == ["n(CA6)"]
    distance = protein_statistic("d(CA4,CA9)", segment_problem, 7.0, True)
    assert isinstance(distance, CaDistanceStatistic)
    assert protein_statistic("contacts", segment_problem, 6.0, False).residues == [4, 5, 6, 7, 8, 9]
    for bad in ("n(CA7..5)", "rg", "d(CA4)"):
        with pytest.raises(ConfigError):
            protein_statistic(bad, segment_problem, 7.0, True)


# ==================== SUMMARIES ====================

def _rows(values, died):
    return [
        {"experiment": "variance", "method": "updown", "MN": 12, "M": 3, "N": 4, "repetition": r,
         "statistic": "terminal", "value": v, "died": d, "cost": 84, "runtime_s": 0.1}
        for r, (v, d) in enumerate(zip(values, died))
    ]


def test_variance_summary_skips_dead_runs():
    table = ResultTable.from_rows(_rows([1.0, 3.0, math.nan], [False, False, True]))
    row = variance_summary(table).iloc[0]
    assert row["n_runs"] == 3
    assert row["died"] == 1
    assert row["n_completed"] == 2
    assert row["death_rate"] == pytest.approx(1 / 3)
    assert row["mean"] == pytest.approx(2.0)
    assert row["variance"] == pytest.approx(2.0)
    assert row["mean_cost"] == 84.0


def test_variance_needs_two_completed_runs():
    row = variance_summary(ResultTable.from_rows(_rows([1.0, math.nan], [False, True]))).iloc[0]
    assert math.isnan(row["variance"])
    assert row["mean"] == 1.0


def test_result_table_splits_timings():
    table = ResultTable.from_rows(_rows([1.0, 2.0], [False, False]))
    assert "runtime_s" not in table.deterministic_frame().columns
    assert list(table.timings()["repetition"]) == [0, 1]


def test_rmse_slopes():
    N = np.array([100, 400, 1600, 6400])
    summary = pd.DataFrame({"method": "updown", "statistic": "s", "M": 5, "N": N, "rmse": 2.0 / np.sqrt(N)})
    slopes = rmse_slopes(summary)
    assert slopes.loc[0, "slope"] == pytest.approx(-0.5)
    assert slopes.loc[0, "n_points"] == 4
    single = rmse_slopes(summary.iloc[:1])
    assert math.isnan(single.loc[0, "slope"])


# ==================== VARIANCE ====================

def test_variance_experiment_rows():
    config = _config(**SMALL_CHAIN)
    outcome = run_variance_experiment(config)
    frame = outcome.results.frame
    # 2 cells x 3 repetitions x 3 statistics, plus the SISR baseline
    assert len(frame) == 2 * 3 * 3 + 3 * 3
    assert set(frame["method"]) == {"updown", "sisr-systematic"}
    assert set(frame.loc[frame["method"] == "updown", "N"]) == {40, 10}
    summary = outcome.summaries["summary"]
    assert len(summary) == 3 * 3
    assert (summary["n_runs"] == 3).all()
    assert outcome.diagnostics["cells"] == [(1, 40), (4, 10)]
    # every completed run proposes MN candidates at each of the 7 steps
    completed = frame[~frame["died"]]
    assert (completed["cost"] == 40 * 7).all()
    assert (frame["cost"] <= 40 * 7).all()
    assert (summary["mean_cost"] > 0).all()


def test_variance_experiment_is_reproducible_across_threads():
    one = run_variance_experiment(_config(threads=1, **SMALL_CHAIN))
    four = run_variance_experiment(_config(threads=4, **SMALL_CHAIN))
    assert one.results.deterministic_frame().equals(four.results.deterministic_frame())


def test_variance_single_repetition_has_nan_variance():
    outcome = run_variance_experiment(_config(**{**SMALL_CHAIN, "repetitions": 1, "sisr_baseline": False}))
    assert outcome.summaries["summary"]["variance"].isna().all()


def test_variance_all_runs_die():
    config = _config(chain={"horizon": 3, "window": 0.0}, MN=20, M_grid=[1, 2], repetitions=2)
    outcome = run_variance_experiment(config)
    assert outcome.all_died
    assert outcome.results.frame["value"].isna().all()
    summary = outcome.summaries["summary"]
    assert (summary["death_rate"] == 1.0).all()
    assert summary["mean"].isna().all()


@pytest.mark.slow
def test_variance_is_lowest_at_an_interior_m():
    config = _config(chain={"horizon": 12}, MN=10000, M_grid=[5, 10, 20, 50, 100], repetitions=60,
                     sisr_baseline=False, statistics=["terminal", "path_mean"], threads=4)
    summary = run_variance_experiment(config).summaries["summary"]
    assert (summary["died"] == 0).all()
    for _, group in summary.groupby("statistic"):
        variance = group.set_index("M")["variance"]
        assert variance.loc[20] < variance.loc[100]
        assert variance.loc[[5, 10, 20, 50]].min() < variance.loc[100]


# ==================== CONVERGENCE ====================

def test_convergence_on_hmm_uses_exact_truth():
    config = _config(model="toy-hmm", N_grid=[20, 80], M=4, repetitions=6, threads=2)
    outcome = run_convergence_experiment(config)
    truth = outcome.diagnostics["truth"]
    model = FiniteStateHMM.from_dict(config.hmm)
    for stat in hmm_statistics():
        assert truth[stat.name] == pytest.approx(enumerate_exact(model, stat)[0])

    frame = outcome.results.frame
    assert set(frame["method"]) == {"updown", "importance"}
    assert set(frame["MN"]) == {80, 320}
    assert not frame["died"].any()
    # no HMM path dies, so importance sampling spends exactly the matched budget
    assert (frame["cost"] == frame["MN"] * 5).all()
    summary = outcome.summaries["summary"]
    assert len(summary) == 2 * 2 * 3
    assert (summary["rmse"] >= summary["bias"].abs() - 1e-12).all()
    slopes = outcome.summaries["slopes"]
    assert len(slopes) == 2 * 3
    assert "stability" not in outcome.summaries


def test_convergence_chain_reports_stability():
    config = _config(chain={"horizon": 4}, N_grid=[10, 30], M=3, repetitions=3,
                     truth={"samples": 300, "max_draws": 300000, "split_repeats": 3})
    outcome = run_convergence_experiment(config)
    stability = outcome.summaries["stability"]
    assert list(stability["statistic"]) == ["terminal", "path_mean", "max_abs"]
    assert ((stability["acceptance_rate"] > 0) & (stability["acceptance_rate"] <= 1)).all()


def test_ground_truth_unavailable():
    config = _config(chain={"horizon": 3, "window": 0.0}, truth={"samples": 10, "max_draws": 50})
    with pytest.raises(OracleUnavailable):
        ground_truth(config, build_model(config))
    with pytest.raises(OracleUnavailable):
        run_convergence_experiment(_config(model="protein"))


# tube and window symmetric about 0, so both expectations vanish
HARSH_CHAIN = {"horizon": 10, "shrink": 0.85, "window": 0.3}
SYMMETRIC_TRUTH = {"terminal": 0.0, "path_mean": 0.0}


@pytest.fixture
def symmetric_truth(monkeypatch):
    monkeypatch.setattr(experiments, "ground_truth", lambda config, bundle: (dict(SYMMETRIC_TRUTH), None))


@pytest.mark.slow
def test_rmse_falls_at_the_monte_carlo_rate(symmetric_truth):
    config = _config(chain=HARSH_CHAIN, N_grid=[100, 200, 400, 800, 1600], M=20, repetitions=100,
                     is_baseline=False, statistics=["terminal", "path_mean"], threads=4)
    outcome = run_convergence_experiment(config)
    summary = outcome.summaries["summary"]
    assert (summary["died"] == 0).all()
    for _, group in summary.groupby("statistic"):
        rmse = group.sort_values("N")["rmse"].to_numpy()
        assert np.count_nonzero(np.diff(rmse) > 0) <= 1
    slopes = outcome.summaries["slopes"]
    assert slopes["slope"].between(-0.65, -0.35).all()


@pytest.mark.slow
def test_updown_beats_importance_sampling_at_matched_budget(symmetric_truth):
    config = _config(chain=HARSH_CHAIN, N_grid=[200], M=20, repetitions=60,
                     statistics=["terminal", "path_mean"], threads=4)
    summary = run_convergence_experiment(config).summaries["summary"].set_index(["method", "statistic"])
    for statistic in SYMMETRIC_TRUTH:
        smc = summary.loc[("updown", statistic), "rmse"]
        baseline = summary.loc[("importance", statistic), "rmse"]
        # a baseline with no accepted path at this budget has no RMSE at all
        assert np.isnan(baseline) or smc <= baseline


# ==================== SEGMENT PROFILE ====================

def test_profile_needs_protein_model():
    with pytest.raises(ConfigError):
        run_segment_profile(_config())


def test_segment_profile(synthetic_dir):
    config = ExperimentConfig.from_settings(_settings(**_protein_settings(synthetic_dir)))
    outcome = run_segment_profile(config)
    profile = outcome.summaries["profile"]
    assert list(profile["residue"]) == [4, 5, 6, 7, 8, 9]
    assert list(profile["residue_name"]) == ["GLY", "SER", "ASP", "LYS", "VAL", "GLY"]
    assert (profile["estimate"] >= 0).all()
    assert (profile["n_particles"] == 40).all()
    assert list(outcome.results.frame["statistic"]) == [f"n(CA{r})" for r in range(4, 10)]
    np.testing.assert_allclose(outcome.results.frame["value"], profile["estimate"])
    assert len(outcome.summaries["steps"]) == 6
    assert outcome.diagnostics["died_at"] is None
    assert (outcome.results.frame["cost"] == 6 * 40 * 5).all()


def test_segment_profile_is_reproducible(synthetic_dir):
    settings = _protein_settings(synthetic_dir, statistics=["n(CA6..8)", "d(CA4,CA9)"])
    one = run_segment_profile(ExperimentConfig.from_settings(_settings(**settings)))
    two = run_segment_profile(ExperimentConfig.from_settings(_settings(threads=3, **settings)))
    assert one.results.deterministic_frame().equals(two.results.deterministic_frame())
    assert one.summaries["profile"].equals(two.summaries["profile"])
    assert list(one.results.frame["statistic"]) == ["n(CA6)", "n(CA7)", "n(CA8)", "d(CA4,CA9)"]
