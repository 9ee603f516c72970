"""
Structural Statistics Module
Structural quantities evaluated on a host structure with a sampled segment:
- CA-CA distances
- atomic contact counts within a radius of a selected atom
- Boltzmann averages of any statistic over an SMC ensemble
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.spatial import cKDTree

from modules.errors import MissingAtom
from protein_model import AtomBlock, PlacedStep, SegmentProblem, excluded_pairs
from smc_core import EstimateReport, ParticleEnsemble, Statistic, estimate

logger = logging.getLogger(__name__)

DEFAULT_CONTACT_RADIUS = 7.0
GRID_THRESHOLD = 256


@dataclass(frozen=True)
class ContactSpec:
    """Contacts of the CA of residue `residue` (chain of the segment unless given)."""
    residue: int
    radius: float = DEFAULT_CONTACT_RADIUS
    atom: str = "CA"
    chain: Optional[str] = None
    include_segment: bool = True

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"contact radius must be positive, got {self.radius}")


# ==================== STRUCTURE VIEW ====================

@dataclass(frozen=True, eq=False)
class StructureView:
    """Host context plus placed segment atoms, addressable by (chain, res_seq, name)."""
    block: AtomBlock
    labels: Tuple[Tuple[str, int, str], ...]
    segment_mask: np.ndarray

    def index_of(self, chain: str, res_seq: int, name: str) -> int:
        try:
            return self.labels.index((chain, res_seq, name))
        except ValueError:
            raise MissingAtom(f"atom {name} of residue {chain}{res_seq} not present")


def structure_view(problem: SegmentProblem, path: Sequence[PlacedStep] = ()) -> StructureView:
    host_atoms = [a for a in problem.host.atoms if not _replaced(problem, a)]
    host_labels = [(a.chain, a.res_seq, a.name) for a in host_atoms]
    placed = problem.placed_block([s.atoms for s in path])
    labels = host_labels + [(problem.chain, r, n) for r, n in problem.placed_labels(len(path))]
    block = AtomBlock.concat([problem.context, placed])
    mask = np.zeros(len(block), dtype=bool)
    mask[len(problem.context):] = True
    return StructureView(block, tuple(labels), mask)


def _replaced(problem: SegmentProblem, atom) -> bool:
    if atom.chain != problem.chain:
        return False
    if atom.res_seq == problem.start and atom.name in ("C", "O", "OXT"):
        return True
    return problem.start + 1 <= atom.res_seq <= problem.end + 1


def view_from_block(block: AtomBlock, labels: Sequence[Tuple[str, int, str]]) -> StructureView:
    return StructureView(block, tuple(labels), np.zeros(len(block), dtype=bool))


# ==================== QUANTITIES ====================

def ca_distance(view: StructureView, i: int, j: int, chain: Optional[str] = None) -> float:
    """Distance between the CA atoms of residues i and j."""
    chain = chain if chain is not None else view.labels[0][0] if view.labels else ""
    a = view.block.coords[view.index_of(chain, i, "CA")]
    b = view.block.coords[view.index_of(chain, j, "CA")]
    return float(np.linalg.norm(a - b))


def _contact_candidates(coords: np.ndarray, center: np.ndarray, radius: float, method: str) -> np.ndarray:
    if method == "auto":
        method = "grid" if coords.shape[0] > GRID_THRESHOLD else "brute"
    if method == "grid":
        hits = cKDTree(coords).query_ball_point(center, radius * (1.0 + 1e-9))
        return np.sort(np.asarray(hits, dtype=np.int64))
    if method == "brute":
        return np.arange(coords.shape[0])
    raise ValueError(f"unknown neighbour search method '{method}'")


def atomic_contacts(view: StructureView, spec: ContactSpec, method: str = "auto") -> int:
    """Atoms within spec.radius (inclusive) of the selected atom, minus bonded and same-residue atoms."""
    chain = spec.chain if spec.chain is not None else view.labels[0][0] if view.labels else ""
    c = view.index_of(chain, spec.residue, spec.atom)
    block = view.block
    candidates = _contact_candidates(block.coords, block.coords[c], spec.radius, method)
    if candidates.size == 0:
        return 0
    diff = block.coords[candidates] - block.coords[c]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    res_c = np.full(candidates.size, block.residues[c])
    kind_c = np.full(candidates.size, block.kinds[c])
    keep = (d <= spec.radius) & (candidates != c)
    keep &= ~excluded_pairs(res_c, kind_c, block.residues[candidates], block.kinds[candidates])
    if not spec.include_segment and view.segment_mask[c]:
        keep &= ~view.segment_mask[candidates]
    return int(np.count_nonzero(keep))


# ==================== STATISTIC OBJECTS ====================

class CaDistanceStatistic(Statistic):
    def __init__(self, problem: SegmentProblem, i: int, j: int):
        self.problem = problem
        self.i, self.j = i, j
        self.name = f"d(CA{i},CA{j})"

    def eval(self, path) -> np.ndarray:
        view = structure_view(self.problem, path)
        return np.array([ca_distance(view, self.i, self.j, self.problem.chain)])


class ContactStatistic(Statistic):
    """Contact counts for one or more residues; vector-valued when several are given."""

    def __init__(self, problem: SegmentProblem, residues: Sequence[int], radius: float = DEFAULT_CONTACT_RADIUS,
                 include_segment: bool = True):
        self.problem = problem
        self.specs = [ContactSpec(r, radius, chain=problem.chain, include_segment=include_segment)
                      for r in residues]
        if len(self.specs) == 1:
            self.name = f"n(CA{self.specs[0].residue})"
        else:
            self.name = f"n(CA{self.specs[0].residue}..{self.specs[-1].residue})"

    @property
    def residues(self) -> List[int]:
        return [s.residue for s in self.specs]

    def eval(self, path) -> np.ndarray:
        view = structure_view(self.problem, path)
        return np.array([atomic_contacts(view, s) for s in self.specs], dtype=float)


def segment_contact_profile(problem: SegmentProblem, radius: float = DEFAULT_CONTACT_RADIUS,
                            include_segment: bool = True) -> ContactStatistic:
    """Contacts of every segment residue start..end."""
    return ContactStatistic(problem, list(range(problem.start, problem.end + 1)), radius, include_segment)


def boltzmann_average(ensemble: ParticleEnsemble, stats: Sequence[Statistic]) -> Dict[str, EstimateReport]:
    return {stat.name: estimate(ensemble, stat) for stat in stats}
