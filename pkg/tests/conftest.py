import os

import numpy as np
import pytest

from protein_model import (
    BackboneGeometry,
    PlacedStep,
    ProteinSegmentModel,
    build_segment_problem,
    measure_dihedrals,
    next_frame,
)
from tables_io import (
    SyntheticTableSpec,
    generate_mini_protein,
    generate_synthetic_tables,
    load_energy_tables,
    parse_pdb,
)
from toy_models import ConstrainedGaussianChain, FiniteStateHMM

MINI_SEQUENCE = ["MET", "ALA", "LEU", "GLY", "SER", "ASP", "LYS", "VAL", "GLY", "THR", "GLU", "ALA"]
SEGMENT = (4, 9)


@pytest.fixture
def hmm():
    return FiniteStateHMM(
        initial=[0.5, 0.3, 0.2],
        transition=[[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.2, 0.3, 0.5]],
        emission=[[0.9, 0.1], [0.3, 0.7], [0.5, 0.5]],
        observations=[0, 1, 1, 0, 1],
        proposal="uniform",
    )


@pytest.fixture
def chain():
    return ConstrainedGaussianChain(horizon=8, bound0=3.0, shrink=0.9, window=0.5)


@pytest.fixture
def loose_chain():
    """Constraints that practically never bind."""
    return ConstrainedGaussianChain(horizon=5, bound0=1e6, shrink=1.0, window=1e6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    files = generate_synthetic_tables(SyntheticTableSpec(), seed=3, out_dir=str(out))
    pdb = os.path.join(str(out), "mini.pdb")
    generate_mini_protein(MINI_SEQUENCE, seed=3, out_path=pdb)
    return {"dir": str(out), "pdb": pdb, "potential": files.potential,
            "dihedrals": files.dihedrals, "closure": files.closure}


@pytest.fixture(scope="session")
def energy_tables(synthetic_dir):
    return load_energy_tables(synthetic_dir["potential"], synthetic_dir["dihedrals"], synthetic_dir["closure"])


@pytest.fixture(scope="session")
def mini_structure(synthetic_dir):
    return parse_pdb(synthetic_dir["pdb"])


@pytest.fixture(scope="session")
def segment_problem(mini_structure, energy_tables):
    return build_segment_problem(mini_structure, SEGMENT[0], SEGMENT[1], energy_tables.potential)


@pytest.fixture(scope="session")
def protein_model(segment_problem, energy_tables):
    return ProteinSegmentModel(segment_problem, energy_tables, BackboneGeometry())


def _native_path(problem):
    """The host's own backbone atoms over the segment, as model states."""
    host = problem.host
    frame = problem.anchor
    path = []
    for t in range(problem.horizon + 1):
        r = problem.start + t
        atoms = np.array([
            host.find_atom(problem.chain, r, "C").coord,
            host.find_atom(problem.chain, r, "O").coord,
            host.find_atom(problem.chain, r + 1, "N").coord,
            host.find_atom(problem.chain, r + 1, "CA").coord,
        ])
        path.append(PlacedStep(measure_dihedrals(frame, atoms), atoms))
        frame = next_frame(atoms)
    return path


@pytest.fixture(scope="session")
def native_path_of():
    return _native_path
