import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from modules.errors import MissingAtom
from protein_model import KIND_C, KIND_N, KIND_OTHER, AtomBlock
from smc_core import ParticleEnsemble
from structural_stats import (
    CaDistanceStatistic,
    ContactSpec,
    ContactStatistic,
    atomic_contacts,
    boltzmann_average,
    ca_distance,
    segment_contact_profile,
    structure_view,
    view_from_block,
)


def _view(coords, residues, names, kinds=None, chain="A"):
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    if kinds is None:
        kinds = [KIND_N if a == "N" else KIND_C if a == "C" else KIND_OTHER for a in names]
    block = AtomBlock(coords, np.zeros(n, dtype=np.int64), np.asarray(residues, dtype=np.int64),
                      np.asarray(kinds, dtype=np.int64), tuple(names))
    return view_from_block(block, [(chain, int(r), a) for r, a in zip(residues, names)])


def _random_view(seed, n=1000, box=30.0):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, box, size=(n, 3))
    coords[0] = box / 2
    residues = np.arange(n) // 4
    names = [("N", "CA", "C", "O")[k % 4] for k in range(n)]
    return coords, residues, names


# ==================== DISTANCES ====================

def test_ca_distance():
    view = _view([[0, 0, 0], [3, 4, 0]], [1, 2], ["CA", "CA"])
    assert ca_distance(view, 1, 2) == pytest.approx(5.0)
    assert ca_distance(view, 1, 1) == 0.0
    with pytest.raises(MissingAtom):
        ca_distance(view, 1, 3)


# ==================== CONTACTS ====================

def test_contact_radius_is_inclusive():
    view = _view([[0, 0, 0], [7.0, 0, 0], [0, 7.1, 0], [0, 0, 1.0], [0, 0, -6.0]],
                 [1, 2, 3, 1, 4], ["CA", "CA", "CA", "CB", "O"])
    for method in ("grid", "brute"):
        assert atomic_contacts(view, ContactSpec(1), method=method) == 2
    assert atomic_contacts(view, ContactSpec(1, radius=7.2)) == 3


def test_bonded_neighbour_excluded():
    view = _view([[0, 0, 0], [1.33, 0, 0], [0, 3.0, 0]], [1, 2, 5], ["C", "N", "N"])
    assert atomic_contacts(view, ContactSpec(1, atom="C")) == 1
    assert atomic_contacts(view, ContactSpec(2, atom="N")) == 1


def test_contact_spec_validation():
    with pytest.raises(ValueError):
        ContactSpec(1, radius=0.0)
    view = _view([[0, 0, 0]], [1], ["CA"])
    with pytest.raises(ValueError):
        atomic_contacts(view, ContactSpec(1), method="octree")


@pytest.mark.parametrize("seed", range(5))
def test_contacts_grid_matches_brute_force(seed):
    view = _view(*_random_view(seed))
    for residue in (0, 17, 101):
        spec = ContactSpec(residue, radius=6.5)
        assert atomic_contacts(view, spec, method="grid") == atomic_contacts(view, spec, method="brute")


def test_contacts_invariant_under_rigid_motion():
    coords, residues, names = _random_view(9, n=400, box=20.0)
    rotation = Rotation.from_euler("xyz", [12.0, 75.0, -33.0], degrees=True)
    moved = rotation.apply(coords) + np.array([-4.0, 9.5, 2.25])
    before = _view(coords, residues, names)
    after = _view(moved, residues, names)
    for residue in (0, 20, 50):
        spec = ContactSpec(residue)
        assert atomic_contacts(after, spec) == atomic_contacts(before, spec)


def test_contacts_monotone_in_radius():
    view = _view(*_random_view(4, n=500, box=25.0))
    counts = [atomic_contacts(view, ContactSpec(0, radius=r)) for r in (3.0, 5.0, 7.0, 9.0, 12.0)]
    assert counts == sorted(counts)
    assert counts[-1] > counts[0]


# ==================== SEGMENT VIEWS ====================

def test_structure_view_labels(segment_problem, native_path_of):
    path = native_path_of(segment_problem)
    view = structure_view(segment_problem, path)
    n_placed = 4 * len(path)
    assert len(view.labels) == len(segment_problem.context) + n_placed
    assert int(view.segment_mask.sum()) == n_placed
    idx = view.index_of("A", segment_problem.start + 1, "N")
    assert view.segment_mask[idx]
    assert not view.segment_mask[view.index_of("A", segment_problem.start, "CA")]
    empty = structure_view(segment_problem)
    with pytest.raises(MissingAtom):
        empty.index_of("A", segment_problem.start + 1, "N")


def test_native_ca_distances_match_host(segment_problem, native_path_of, mini_structure):
    stat = CaDistanceStatistic(segment_problem, 5, 9)
    assert stat.name == "d(CA5,CA9)"
    host = np.linalg.norm(mini_structure.find_atom("A", 5, "CA").coord - mini_structure.find_atom("A", 9, "CA").coord)
    assert stat(tuple(native_path_of(segment_problem)))[0] == pytest.approx(host)


def test_contact_profile(segment_problem, native_path_of):
    path = tuple(native_path_of(segment_problem))
    profile = segment_contact_profile(segment_problem)
    assert profile.name == "n(CA4..9)"
    assert profile.residues == [4, 5, 6, 7, 8, 9]
    counts = profile(path)
    assert counts.shape == (6,)
    assert np.all(counts >= 0)
    apart = segment_contact_profile(segment_problem, include_segment=False)(path)
    assert apart[0] == counts[0]
    assert np.all(apart <= counts)
    single = ContactStatistic(segment_problem, [6])
    assert single.name == "n(CA6)"
    assert single(path)[0] == counts[2]


def test_boltzmann_average(segment_problem, native_path_of):
    path = tuple(native_path_of(segment_problem))
    stat = CaDistanceStatistic(segment_problem, 4, 8)
    ensemble = ParticleEnsemble.from_log_weights([path, path, path], np.log([0.2, 0.3, 0.5]), segment_problem.horizon)
    reports = boltzmann_average(ensemble, [stat, segment_contact_profile(segment_problem)])
    assert reports[stat.name].value == pytest.approx(stat(path)[0])
    np.testing.assert_allclose(reports["n(CA4..9)"].point, segment_contact_profile(segment_problem)(path))
