import dataclasses
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from scipy.stats import chisquare, norm

from modules.errors import ConfigError, DegenerateFrame, MissingAtom, RangeTableMiss, UnknownAminoAcid
from protein_model import (
    ATOMIC_WEIGHT,
    KIND_C,
    KIND_N,
    KIND_OTHER,
    TEMPERATURE,
    AtomBlock,
    BackboneGeometry,
    DihedralTriple,
    PlacedStep,
    ProteinSegmentModel,
    as_sequential_model,
    build_backbone,
    build_segment_problem,
    closure_feasible,
    dihedral_bin,
    eval_h_theta,
    excluded_pairs,
    incremental_energy,
    measure_dihedrals,
    next_frame,
    pairwise_energy,
    place_atom,
    sample_dihedral,
    segment_pair_energy,
    step_pair_energy,
    virtual_bond_length,
    wrap_angle,
)
from smc_core import run_updown_smc
from tables_io import (
    ClosureRangeTable,
    DihedralDistributionSet,
    EnergyTables,
    PotentialTable,
    ProteinStructure,
)

SEGMENT = (4, 9)


def _incremental_total(problem, path, potential, method="auto"):
    total = 0.0
    for t, step in enumerate(path):
        h_a, clash = step_pair_energy(problem, path[:t], step.atoms, potential, method)
        if clash:
            return math.inf, True
        total += h_a
    return total, False


def _single_bin_tables(phi_bin=10, psi_bin=20, aa="ALA"):
    matrix = np.zeros((72, 72))
    matrix[phi_bin, psi_bin] = 1.0
    return DihedralDistributionSet({aa: matrix}, omega_mean=180.0, omega_sd=3.0)


def _tiny_potential():
    scores = np.full((1, 1, 4), -1.0)
    scores[0, 0, 0] = 8.0
    return PotentialTable(("A",), 1.0, 4.0, scores, 8.0)


def _block(coords, residues, kinds=None):
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    return AtomBlock(coords, np.zeros(n, dtype=np.int64), np.asarray(residues, dtype=np.int64),
                     np.asarray(kinds if kinds is not None else [KIND_OTHER] * n, dtype=np.int64))


# ==================== GEOMETRY ====================

@pytest.mark.parametrize("angle,expected", [(190.0, -170.0), (-180.0, 180.0), (180.0, 180.0),
                                            (540.0, 180.0), (-190.0, 170.0), (0.0, 0.0)])
def test_wrap_angle(angle, expected):
    assert wrap_angle(angle) == pytest.approx(expected)


def test_dihedral_round_trip():
    geom = BackboneGeometry()
    rng = np.random.default_rng(5)
    # 100 chains of 100 residues each, restarted from the reference frame
    for _ in range(100):
        triples = [DihedralTriple(*rng.uniform(-180, 180, size=3)) for _ in range(100)]
        frame = geom.reference_frame()
        for triple, atoms in zip(triples, build_backbone(frame, triples, geom)):
            measured = measure_dihedrals(frame, atoms)
            for got, want in zip(measured.as_tuple(), triple.as_tuple()):
                assert abs(wrap_angle(got - want)) < 1e-9
            frame = next_frame(atoms)


def test_bond_lengths_are_fixed():
    geom = BackboneGeometry()
    frame = geom.reference_frame()
    c_t, o_t, n_next, ca_next = build_backbone(frame, [DihedralTriple(-60, -45, 180)], geom)[0]
    ca_t = frame[2]
    assert np.linalg.norm(c_t - ca_t) == pytest.approx(geom.ca_c)
    assert np.linalg.norm(o_t - c_t) == pytest.approx(geom.c_o)
    assert np.linalg.norm(n_next - c_t) == pytest.approx(geom.c_n)
    assert np.linalg.norm(ca_next - n_next) == pytest.approx(geom.n_ca)
    assert np.linalg.norm(ca_next - c_t) == pytest.approx(geom.c_to_next_ca)


def test_trans_virtual_bond():
    geom = BackboneGeometry()
    frame = geom.reference_frame()
    for phi, psi in [(-60, -45), (-120, 130), (60, 45)]:
        atoms = build_backbone(frame, [DihedralTriple(phi, psi, 180.0)], geom)[0]
        span = np.linalg.norm(atoms[3] - frame[2])
        assert span == pytest.approx(3.80, abs=0.03)
        assert span == pytest.approx(virtual_bond_length(geom, 180.0), abs=1e-9)
    assert virtual_bond_length(geom, 0.0) < virtual_bond_length(geom, 180.0)


def test_collinear_frame_is_degenerate():
    with pytest.raises(DegenerateFrame):
        place_atom([0, 0, 0], [1, 0, 0], [2, 0, 0], 1.5, 110.0, 60.0)
    with pytest.raises(DegenerateFrame):
        place_atom([0, 0, 0], [1, 0, 0], [1, 0, 0], 1.5, 110.0, 60.0)


def test_geometry_from_dict():
    geom = BackboneGeometry.from_dict({"n_ca": 1.46})
    assert geom.n_ca == 1.46
    with pytest.raises(ConfigError):
        BackboneGeometry.from_dict({"n_ca_length": 1.46})
    with pytest.raises(ConfigError):
        BackboneGeometry.from_dict({"c_n": 3.0})


def test_triple_rejects_non_finite():
    with pytest.raises(ValueError):
        DihedralTriple(float("nan"), 0.0, 180.0)


# ==================== DIHEDRAL PROPOSAL ====================

def test_dihedral_bin_edges():
    assert dihedral_bin(-180.0) == 0
    assert dihedral_bin(-175.0) == 1
    assert dihedral_bin(179.99) == 71
    assert dihedral_bin(180.0) == 0


def test_sample_dihedral_stays_in_bin(rng):
    tables = _single_bin_tables()
    for _ in range(200):
        triple = sample_dihedral("ALA", tables, rng)
        assert -130.0 <= triple.phi < -125.0
        assert -80.0 <= triple.psi < -75.0
        assert abs(wrap_angle(triple.omega - 180.0)) < 20.0
    with pytest.raises(UnknownAminoAcid):
        sample_dihedral("GLY", tables, rng)


@pytest.fixture(scope="module")
def ala_draws(energy_tables):
    rng = np.random.default_rng(808)
    return [sample_dihedral("ALA", energy_tables.dihedrals, rng) for _ in range(100_000)]


def test_sampled_omega_moments(ala_draws):
    omega = np.mod([t.omega for t in ala_draws], 360.0)
    assert omega.mean() == pytest.approx(180.0, abs=0.05)
    assert omega.std(ddof=1) == pytest.approx(3.0, abs=0.05)


def test_sampled_bins_follow_table(ala_draws, energy_tables):
    matrix = energy_tables.dihedrals.matrices["ALA"]
    flat = [dihedral_bin(t.phi) * 72 + dihedral_bin(t.psi) for t in ala_draws]
    observed = np.bincount(flat, minlength=matrix.size).astype(float)
    expected = len(ala_draws) * matrix.ravel() / matrix.sum()
    # sparse bins are pooled so every cell expects at least five draws
    dense = expected >= 5.0
    f_obs = np.append(observed[dense], observed[~dense].sum())
    f_exp = np.append(expected[dense], expected[~dense].sum())
    assert dense.sum() > 100
    assert chisquare(f_obs, f_exp).pvalue > 1e-3


def _raw_dihedral_block(path, aa):
    """Omega parameters and the (phi, psi) rows of one residue block, read straight from the file."""
    omega = {"omega_mean": 180.0, "omega_sd": 3.0}
    rows, current = [], None
    with open(path, encoding="utf-8") as f:
        for line in f:
            tokens = line.split("#", 1)[0].split()
            if not tokens or tokens[0] == "format":
                continue
            if tokens[0] in omega:
                omega[tokens[0]] = float(tokens[1])
            elif tokens[0] == "residue":
                current = tokens[1]
            elif current == aa:
                rows.append([float(v) for v in tokens])
    return omega["omega_mean"], omega["omega_sd"], rows


def test_eval_h_theta_matches_raw_table(synthetic_dir, energy_tables):
    omega_mean, omega_sd, rows = _raw_dihedral_block(synthetic_dir["dihedrals"], "LEU")
    assert len(rows) == 72
    rng = np.random.default_rng(12)
    for _ in range(200):
        triple = sample_dihedral("LEU", energy_tables.dihedrals, rng)
        i = int((triple.phi + 180.0) // 5.0) % 72
        j = int((triple.psi + 180.0) // 5.0) % 72
        deviation = wrap_angle(triple.omega - omega_mean)
        expected = -math.log(rows[i][j] / 25.0) - norm.logpdf(deviation, 0.0, omega_sd)
        assert eval_h_theta(triple, "LEU", energy_tables.dihedrals) == pytest.approx(expected, rel=1e-9)


def test_eval_h_theta():
    tables = _single_bin_tables()
    inside = DihedralTriple(-127.0, -77.0, 183.0)
    expected = -math.log(1 / 25.0) - norm.logpdf(3.0, 0.0, 3.0)
    assert eval_h_theta(inside, "ALA", tables) == pytest.approx(expected)
    assert eval_h_theta(DihedralTriple(0.0, 0.0, 180.0), "ALA", tables) == math.inf


# ==================== PAIRWISE ENERGY ====================

def test_excluded_pairs():
    res_i = np.array([3, 3, 3, 4, 3])
    kind_i = np.array([KIND_OTHER, KIND_C, KIND_N, KIND_N, KIND_N])
    res_j = np.array([3, 4, 2, 3, 4])
    kind_j = np.array([KIND_OTHER, KIND_N, KIND_C, KIND_C, KIND_C])
    assert excluded_pairs(res_i, kind_i, res_j, kind_j).tolist() == [True, True, True, True, False]


def test_clash_and_exclusion():
    pot = _tiny_potential()
    assert pairwise_energy(_block([[0, 0, 0]], [1]), _block([[0.5, 0, 0]], [5]), pot) == (math.inf, True)
    assert pairwise_energy(_block([[0, 0, 0]], [5]), _block([[0.5, 0, 0]], [5]), pot) == (0.0, False)
    bonded = pairwise_energy(_block([[0, 0, 0]], [1], [KIND_C]), _block([[0.5, 0, 0]], [2], [KIND_N]), pot)
    assert bonded == (0.0, False)


def test_max_distance_pairs_contribute_nothing():
    pot = _tiny_potential()
    assert pairwise_energy(_block([[0, 0, 0]], [1]), _block([[3.5, 0, 0]], [9]), pot) == (-1.0, False)
    assert pairwise_energy(_block([[0, 0, 0]], [1]), _block([[4.0, 0, 0]], [9]), pot) == (0.0, False)


def test_internal_pairs_are_optional():
    pot = _tiny_potential()
    new = _block([[0, 0, 0], [2.5, 0, 0]], [1, 2])
    assert pairwise_energy(new, AtomBlock.empty(), pot) == (-1.0, False)
    assert pairwise_energy(new, AtomBlock.empty(), pot, include_internal=False) == (0.0, False)


@pytest.mark.parametrize("seed", range(5))
def test_grid_and_brute_force_agree(seed, energy_tables):
    pot = energy_tables.potential
    rng = np.random.default_rng(seed)
    lattice = np.stack(np.meshgrid(*[np.arange(7) * 2.6] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    coords = lattice + rng.uniform(-0.2, 0.2, size=lattice.shape)
    rng.shuffle(coords)
    types = rng.integers(0, len(pot.types), size=len(coords))
    residues = np.arange(len(coords)) * 3
    kinds = np.zeros(len(coords), dtype=np.int64)
    new = AtomBlock(coords[:40], types[:40], residues[:40], kinds[:40])
    context = AtomBlock(coords[40:], types[40:], residues[40:], kinds[40:])
    grid = pairwise_energy(new, context, pot, method="grid")
    brute = pairwise_energy(new, context, pot, method="brute")
    assert not grid[1]
    assert grid == brute


def test_unknown_pair_method(energy_tables):
    block = _block([[0, 0, 0]], [1])
    with pytest.raises(ValueError):
        pairwise_energy(block, _block([[5, 0, 0]], [3]), energy_tables.potential, method="octree")


# ==================== CLOSURE ====================

def test_closure_bounds_are_inclusive():
    ranges = ClosureRangeTable(np.array([[1.0, 2.0, 3.0, 4.0]]))
    target = [0.0, 0.0, 0.0]
    assert closure_feasible([1.0, 0, 0], [0, 4.0, 0], target, 0, ranges)
    assert closure_feasible([2.0, 0, 0], [0, 3.0, 0], target, 0, ranges)
    assert not closure_feasible([2.0, 0, 0], [0, 4.0001, 0], target, 0, ranges)
    assert not closure_feasible([0.99, 0, 0], [0, 3.5, 0], target, 0, ranges)
    with pytest.raises(RangeTableMiss):
        closure_feasible([1.0, 0, 0], [0, 4.0, 0], target, 1, ranges)
    with pytest.raises(RangeTableMiss):
        closure_feasible([1.0, 0, 0], [0, 4.0, 0], target, -1, ranges)


# ==================== SEGMENT PROBLEM ====================

def test_segment_problem_layout(segment_problem, mini_structure):
    start, end = SEGMENT
    assert segment_problem.horizon == end - start
    np.testing.assert_array_equal(segment_problem.anchor[0], mini_structure.find_atom("A", start - 1, "C").coord)
    np.testing.assert_array_equal(segment_problem.anchor[1], mini_structure.find_atom("A", start, "N").coord)
    np.testing.assert_array_equal(segment_problem.anchor[2], mini_structure.find_atom("A", start, "CA").coord)
    np.testing.assert_array_equal(segment_problem.target, mini_structure.find_atom("A", end + 2, "CA").coord)
    assert segment_problem.amino_acids == ("GLY", "SER", "ASP", "LYS", "VAL", "GLY")
    assert segment_problem.residue_names[-1] == "THR"
    assert segment_problem.step_types.shape == (end - start + 1, 4)
    rebuilt = sum(1 for a in mini_structure.atoms if start + 1 <= a.res_seq <= end + 1)
    assert len(segment_problem.context) == len(mini_structure) - rebuilt - 2
    assert segment_problem.start_key == 3
    labels = segment_problem.placed_labels(2)
    assert labels == [(4, "C"), (4, "O"), (5, "N"), (5, "CA"), (5, "C"), (5, "O"), (6, "N"), (6, "CA")]


def test_segment_problem_needs_flanking_residues(mini_structure, energy_tables):
    with pytest.raises(MissingAtom):
        build_segment_problem(mini_structure, 1, 5, energy_tables.potential)
    with pytest.raises(MissingAtom):
        build_segment_problem(mini_structure, 4, 11, energy_tables.potential)
    with pytest.raises(MissingAtom):
        build_segment_problem(mini_structure, 4, 9, energy_tables.potential, chain="B")
    with pytest.raises(ConfigError):
        build_segment_problem(mini_structure, 9, 4, energy_tables.potential)


def test_model_checks_tables(segment_problem, energy_tables):
    no_gly = EnergyTables(energy_tables.potential, _single_bin_tables(), energy_tables.closure)
    with pytest.raises(UnknownAminoAcid):
        ProteinSegmentModel(segment_problem, no_gly)
    short = EnergyTables(energy_tables.potential, energy_tables.dihedrals,
                         ClosureRangeTable(np.array(energy_tables.closure.rows[:3])))
    with pytest.raises(RangeTableMiss):
        ProteinSegmentModel(segment_problem, short)


# ==================== ENERGY ====================

def test_incremental_energy_matches_whole_segment(segment_problem, energy_tables, native_path_of):
    path = native_path_of(segment_problem)
    pot = energy_tables.potential
    incremental = _incremental_total(segment_problem, path, pot)
    whole = segment_pair_energy(segment_problem, path, pot)
    assert incremental[1] == whole[1]
    assert not whole[1]
    assert incremental[0] == pytest.approx(whole[0], rel=1e-9, abs=1e-9)
    assert segment_pair_energy(segment_problem, path, pot, method="grid") == \
        segment_pair_energy(segment_problem, path, pot, method="brute")


def _random_paths(model, count, seed):
    """Paths grown from the dihedral proposal alone, clashes included."""
    rng = np.random.default_rng(seed)
    paths = []
    for _ in range(count):
        prefix = (model.initial_propose(rng),)
        while len(prefix) <= model.horizon:
            prefix += (model.propose(prefix, rng),)
        paths.append(prefix)
    return paths


def test_incremental_energy_is_additive(protein_model, segment_problem, energy_tables):
    pot = energy_tables.potential
    ensemble, _ = run_updown_smc(protein_model, 40, 5, seed=(11, 0))
    paths = list(ensemble.paths[:40]) + _random_paths(protein_model, 60, seed=3)
    finite = 0
    for path in paths:
        incremental = _incremental_total(segment_problem, path, pot)
        whole = segment_pair_energy(segment_problem, path, pot)
        assert incremental[1] == whole[1]
        if not whole[1]:
            finite += 1
            assert incremental[0] == pytest.approx(whole[0], rel=1e-9, abs=1e-9)
    assert finite >= 40


def test_energy_is_invariant_under_rigid_motion(segment_problem, energy_tables, mini_structure, native_path_of):
    rotations = Rotation.random(100, random_state=19)
    shifts = np.random.default_rng(19).uniform(-25.0, 25.0, size=(100, 3))
    start, end = SEGMENT
    before = _incremental_total(segment_problem, native_path_of(segment_problem), energy_tables.potential)
    model_a = ProteinSegmentModel(segment_problem, energy_tables)

    for k in range(100):
        rotation, shift = rotations[k], shifts[k]

        def move(atom):
            x, y, z = rotation.apply([atom.x, atom.y, atom.z]) + shift
            return dataclasses.replace(atom, x=float(x), y=float(y), z=float(z))

        moved = build_segment_problem(ProteinStructure(tuple(move(a) for a in mini_structure.atoms)),
                                      start, end, energy_tables.potential)
        after = _incremental_total(moved, native_path_of(moved), energy_tables.potential)
        assert after[1] == before[1]
        assert after[0] == pytest.approx(before[0], rel=1e-9, abs=1e-9)
        if k >= 5:
            continue

        model_b = ProteinSegmentModel(moved, energy_tables)
        rng_a, rng_b = np.random.default_rng(k), np.random.default_rng(k)
        prefix_a, prefix_b = (), ()
        for _ in range(3):
            xa, xb = model_a.propose(prefix_a, rng_a), model_b.propose(prefix_b, rng_b)
            assert xa.triple == xb.triple
            la, lb = model_a.log_increment(prefix_a, xa), model_b.log_increment(prefix_b, xb)
            if math.isinf(la):
                assert lb == la
            else:
                assert lb == pytest.approx(la, rel=1e-9, abs=1e-9)
            prefix_a, prefix_b = prefix_a + (xa,), prefix_b + (xb,)


def test_log_increment_is_boltzmann_factor(protein_model, segment_problem, energy_tables):
    rng = np.random.default_rng(21)
    finite = 0
    for _ in range(80):
        prefix = ()
        for t in range(segment_problem.horizon + 1):
            x = protein_model.propose(prefix, rng) if prefix else protein_model.initial_propose(rng)
            log_inc = protein_model.log_increment(prefix, x) if prefix else protein_model.initial_log_increment(x)
            energy = incremental_energy(segment_problem, prefix, x.triple, energy_tables, protein_model.geometry)
            if math.isinf(energy.total):
                assert log_inc == -math.inf
                break
            finite += 1
            boltzmann = math.exp(-(energy.total - energy.h_theta) / TEMPERATURE)
            assert math.exp(log_inc) == pytest.approx(boltzmann, rel=1e-9)
            assert energy.total == pytest.approx(ATOMIC_WEIGHT * energy.h_a + energy.h_theta)
            prefix += (x,)
    assert finite > 0


def test_closure_violation_kills_increment(protein_model, rng):
    x = protein_model.initial_propose(rng)
    far = PlacedStep(x.triple, x.atoms + 1000.0)
    assert protein_model.initial_log_increment(far) == -math.inf
    breakdown = protein_model.breakdown((), far)
    assert not breakdown.closure_ok
    assert breakdown.total == math.inf


def test_updown_on_segment(protein_model, segment_problem, energy_tables):
    ensemble, diag = run_updown_smc(protein_model, 40, 5, seed=(11, 0))
    assert len(ensemble) == 40
    assert diag.completed
    min_c, max_c, min_ca, max_ca = energy_tables.closure.row(0)
    for path in ensemble.paths[:10]:
        assert len(path) == segment_problem.horizon + 1
        final = path[-1].atoms
        assert min_ca <= np.linalg.norm(final[3] - segment_problem.target) <= max_ca
        conformation = protein_model.conformation(path)
        assert conformation.atoms.shape == (3 + 4 * len(path), 3)
        for got, want in zip(conformation.measured_dihedrals(), conformation.dihedrals):
            assert abs(wrap_angle(got.phi - want.phi)) < 1e-6
            assert abs(wrap_angle(got.psi - want.psi)) < 1e-6


def test_adapter_model_runs_updown(protein_model, segment_problem, energy_tables):
    model = as_sequential_model(segment_problem, energy_tables)
    ensemble, diag = run_updown_smc(model, 40, 5, seed=(11, 0), threads=2)
    reference, _ = run_updown_smc(protein_model, 40, 5, seed=(11, 0))
    assert diag.completed
    assert diag.cost == (segment_problem.horizon + 1) * 40 * 5
    np.testing.assert_array_equal(ensemble.log_weights, reference.log_weights)
    for got, want in zip(ensemble.paths, reference.paths):
        assert [s.triple for s in got] == [s.triple for s in want]
