"""
Protein Model Module
Backbone segment sampling as a SequentialModel:
- dihedral <-> Cartesian conversion (internal-coordinate extension)
- proposal from the per amino acid (phi, psi) bins and the omega normal
- pairwise potential with clash rule, closure indicator, incremental energy
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.spatial import cKDTree

from modules.errors import (
    ConfigError, DegenerateFrame, MissingAtom, RangeTableMiss, UnknownAminoAcid,
)
from smc_core import SequentialModel
from tables_io import (
    DIHEDRAL_BIN_DEGREES, N_DIHEDRAL_BINS, ClosureRangeTable, DihedralDistributionSet,
    EnergyTables, PotentialTable, ProteinStructure,
)

logger = logging.getLogger(__name__)

INF = float("inf")
NEG_INF = float("-inf")

# Weight of the pairwise term relative to the dihedral term, and the
# effective temperature of the Boltzmann distribution.
ATOMIC_WEIGHT = 0.1
TEMPERATURE = 1.0

KIND_OTHER, KIND_N, KIND_C = 0, 1, 2
PLACED_NAMES = ("C", "O", "N", "CA")
PLACED_KINDS = np.array([KIND_C, KIND_OTHER, KIND_N, KIND_OTHER], dtype=np.int64)
# residue offset of each placed atom relative to the residue of step t
PLACED_OFFSETS = np.array([0, 0, 1, 1], dtype=np.int64)

AUTO_GRID_PAIRS = 20000
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def wrap_angle(angle: float) -> float:
    """Map degrees into (-180, 180]."""
    return 180.0 - ((180.0 - angle) % 360.0)


# ==================== TYPES ====================

@dataclass(frozen=True)
class DihedralTriple:
    phi: float
    psi: float
    omega: float

    def __post_init__(self):
        for name in ("phi", "psi", "omega"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, wrap_angle(value))

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.phi, self.psi, self.omega)


@dataclass(frozen=True)
class BackboneGeometry:
    """Fixed bond lengths (Angstrom) and bond angles (degrees)."""
    n_ca: float = 1.458
    ca_c: float = 1.525
    c_n: float = 1.329
    c_o: float = 1.231
    n_ca_c: float = 111.2
    ca_c_n: float = 116.2
    c_n_ca: float = 121.7
    ca_c_o: float = 120.5
    ca_cb: float = 1.530
    n_ca_cb: float = 110.5
    cb_torsion: float = -122.6

    LENGTHS = ("n_ca", "ca_c", "c_n", "c_o", "ca_cb")
    ANGLES = ("n_ca_c", "ca_c_n", "c_n_ca", "ca_c_o", "n_ca_cb")

    def __post_init__(self):
        for name in self.LENGTHS:
            value = getattr(self, name)
            if not 0.8 < value < 2.0:
                raise ConfigError(f"geometry.{name} = {value} outside (0.8, 2.0) Angstrom")
        for name in self.ANGLES:
            value = getattr(self, name)
            if not 90.0 < value < 180.0:
                raise ConfigError(f"geometry.{name} = {value} outside (90, 180) degrees")

    @classmethod
    def from_dict(cls, params: Optional[dict]) -> "BackboneGeometry":
        params = dict(params or {})
        known = set(cls.LENGTHS) | set(cls.ANGLES) | {"cb_torsion"}
        unknown = set(params) - known
        if unknown:
            raise ConfigError(f"unknown geometry keys: {sorted(unknown)}")
        try:
            return cls(**{k: float(v) for k, v in params.items()})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid geometry block: {e}")

    @property
    def c_to_next_ca(self) -> float:
        """Fixed distance C(t) - CA(t+1) across the peptide bond."""
        theta = math.radians(self.c_n_ca)
        return math.sqrt(self.c_n ** 2 + self.n_ca ** 2 - 2.0 * self.c_n * self.n_ca * math.cos(theta))

    def reference_frame(self) -> np.ndarray:
        """(C_prev, N, CA) with N at the origin and CA on +x."""
        theta = math.radians(self.c_n_ca)
        c_prev = self.c_n * np.array([math.cos(theta), math.sin(theta), 0.0])
        return np.array([c_prev, [0.0, 0.0, 0.0], [self.n_ca, 0.0, 0.0]])


# ==================== GEOMETRY ====================

def place_atom(a, b, c, bond: float, angle: float, torsion: float) -> np.ndarray:
    """Position D with |CD| = bond, angle BCD = angle and dihedral ABCD = torsion (degrees)."""
    ax, ay, az = (float(v) for v in a)
    bx, by, bz = (float(v) for v in b)
    cx, cy, cz = (float(v) for v in c)
    ux, uy, uz = cx - bx, cy - by, cz - bz
    ulen = math.sqrt(ux * ux + uy * uy + uz * uz)
    if ulen < 1e-9:
        raise DegenerateFrame("coincident frame atoms")
    ux, uy, uz = ux / ulen, uy / ulen, uz / ulen
    vx, vy, vz = bx - ax, by - ay, bz - az
    nx, ny, nz = vy * uz - vz * uy, vz * ux - vx * uz, vx * uy - vy * ux
    nlen = math.sqrt(nx * nx + ny * ny + nz * nz)
    vlen = math.sqrt(vx * vx + vy * vy + vz * vz)
    if vlen < 1e-9 or nlen < 1e-9 * vlen:
        raise DegenerateFrame("collinear frame atoms")
    nx, ny, nz = nx / nlen, ny / nlen, nz / nlen
    mx, my, mz = ny * uz - nz * uy, nz * ux - nx * uz, nx * uy - ny * ux
    theta = math.radians(angle)
    tau = math.radians(torsion)
    d0 = -bond * math.cos(theta)
    d1 = bond * math.sin(theta) * math.cos(tau)
    d2 = bond * math.sin(theta) * math.sin(tau)
    return np.array([
        cx + d0 * ux + d1 * mx + d2 * nx,
        cy + d0 * uy + d1 * my + d2 * ny,
        cz + d0 * uz + d1 * mz + d2 * nz,
    ])


def dihedral(a, b, c, d) -> float:
    """Dihedral angle ABCD in degrees, in (-180, 180]."""
    a, b, c, d = (np.asarray(p, dtype=float) for p in (a, b, c, d))
    b0 = a - b
    b1 = c - b
    b1 = b1 / np.linalg.norm(b1)
    b2 = d - c
    v = b0 - np.dot(b0, b1) * b1
    w = b2 - np.dot(b2, b1) * b1
    x = np.dot(v, w)
    y = np.dot(np.cross(b1, v), w)
    return wrap_angle(math.degrees(math.atan2(y, x)))


def place_next_backbone(frame, triple: DihedralTriple, geom: BackboneGeometry) -> np.ndarray:
    """Rows C(t), O(t), N(t+1), CA(t+1) from the frame (C(t-1), N(t), CA(t))."""
    c_prev, n_t, ca_t = frame
    c_t = place_atom(c_prev, n_t, ca_t, geom.ca_c, geom.n_ca_c, triple.phi)
    n_next = place_atom(n_t, ca_t, c_t, geom.c_n, geom.ca_c_n, triple.psi)
    o_t = place_atom(n_t, ca_t, c_t, geom.c_o, geom.ca_c_o, triple.psi + 180.0)
    ca_next = place_atom(ca_t, c_t, n_next, geom.n_ca, geom.c_n_ca, triple.omega)
    return np.array([c_t, o_t, n_next, ca_next])


def next_frame(atoms: np.ndarray) -> np.ndarray:
    return np.array([atoms[0], atoms[2], atoms[3]])


def measure_dihedrals(frame, atoms: np.ndarray) -> DihedralTriple:
    c_prev, n_t, ca_t = frame
    c_t, _, n_next, ca_next = atoms
    return DihedralTriple(
        dihedral(c_prev, n_t, ca_t, c_t),
        dihedral(n_t, ca_t, c_t, n_next),
        dihedral(ca_t, c_t, n_next, ca_next),
    )


def build_backbone(anchor, triples: Sequence[DihedralTriple], geom: BackboneGeometry) -> List[np.ndarray]:
    frame = np.asarray(anchor, dtype=float)
    out = []
    for triple in triples:
        atoms = place_next_backbone(frame, triple, geom)
        out.append(atoms)
        frame = next_frame(atoms)
    return out


def virtual_bond_length(geom: BackboneGeometry, omega: float) -> float:
    """CA(t) - CA(t+1) distance for a given omega, in closed form."""
    t1 = math.radians(geom.ca_c_n)
    t2 = math.radians(geom.c_n_ca)
    w = math.radians(omega)
    ca_t = geom.ca_c * np.array([math.cos(t1), math.sin(t1), 0.0])
    ca_next = np.array([geom.c_n, 0.0, 0.0]) + geom.n_ca * np.array(
        [-math.cos(t2), math.sin(t2) * math.cos(w), math.sin(t2) * math.sin(w)]
    )
    return float(np.linalg.norm(ca_next - ca_t))


# ==================== DIHEDRAL PROPOSAL ====================

def _matrix(aa_type: str, tables: DihedralDistributionSet) -> np.ndarray:
    if aa_type not in tables:
        raise UnknownAminoAcid(f"no dihedral distribution for amino acid '{aa_type}'")
    return tables.matrices[aa_type]


def dihedral_bin(angle: float) -> int:
    return int(math.floor((angle + 180.0) / DIHEDRAL_BIN_DEGREES)) % N_DIHEDRAL_BINS


def sample_dihedral(aa_type: str, tables: DihedralDistributionSet, rng: np.random.Generator) -> DihedralTriple:
    """(phi, psi) bin from the table, uniform inside the bin; omega ~ Normal(mean, sd) wrapped."""
    _matrix(aa_type, tables)
    cdf = tables.cdf(aa_type)
    flat = min(int(np.searchsorted(cdf, rng.uniform(), side="right")), cdf.size - 1)
    i, j = divmod(flat, N_DIHEDRAL_BINS)
    phi = -180.0 + DIHEDRAL_BIN_DEGREES * (i + rng.uniform())
    psi = -180.0 + DIHEDRAL_BIN_DEGREES * (j + rng.uniform())
    omega = rng.normal(tables.omega_mean, tables.omega_sd)
    return DihedralTriple(phi, psi, omega)


def eval_h_theta(triple: DihedralTriple, aa_type: str, tables: DihedralDistributionSet) -> float:
    """-log of the proposal density: bin mass over bin area times the omega normal."""
    mass = _matrix(aa_type, tables)[dihedral_bin(triple.phi), dihedral_bin(triple.psi)]
    if mass <= 0:
        return INF
    z = wrap_angle(triple.omega - tables.omega_mean) / tables.omega_sd
    omega_nll = 0.5 * z * z + math.log(tables.omega_sd) + _HALF_LOG_2PI
    return float(-math.log(mass / DIHEDRAL_BIN_DEGREES ** 2) + omega_nll)


# ==================== PAIRWISE ENERGY ====================

@dataclass(frozen=True, eq=False)
class AtomBlock:
    """Atoms with potential type codes, residue keys and bond kinds.

    Consecutive residue keys denote peptide-bonded neighbours.
    """
    coords: np.ndarray
    types: np.ndarray
    residues: np.ndarray
    kinds: np.ndarray
    names: Tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.coords.shape[0]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.coords)

    @classmethod
    def empty(cls) -> "AtomBlock":
        z = np.empty(0, dtype=np.int64)
        return cls(np.empty((0, 3)), z, z, z)

    @classmethod
    def concat(cls, blocks: Sequence["AtomBlock"]) -> "AtomBlock":
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            return cls.empty()
        names = tuple(n for b in blocks for n in (b.names or ("",) * len(b)))
        return cls(
            np.vstack([b.coords for b in blocks]),
            np.concatenate([b.types for b in blocks]),
            np.concatenate([b.residues for b in blocks]),
            np.concatenate([b.kinds for b in blocks]),
            names,
        )


def kind_of(name: str) -> int:
    if name == "N":
        return KIND_N
    if name == "C":
        return KIND_C
    return KIND_OTHER


def excluded_pairs(res_i, kind_i, res_j, kind_j) -> np.ndarray:
    """Same residue, or the peptide bond C(r)-N(r+1)."""
    return (
        (res_i == res_j)
        | ((kind_i == KIND_C) & (kind_j == KIND_N) & (res_j == res_i + 1))
        | ((kind_i == KIND_N) & (kind_j == KIND_C) & (res_i == res_j + 1))
    )


def _pair_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _candidate_pairs(new: AtomBlock, context: AtomBlock, cutoff: float, method: str):
    if method == "grid":
        hits = context.tree.query_ball_point(new.coords, cutoff * (1.0 + 1e-9))
        i = np.repeat(np.arange(len(new)), [len(h) for h in hits])
        j = np.fromiter((k for h in hits for k in h), dtype=np.int64, count=int(i.size))
        order = np.lexsort((j, i))
        return i[order], j[order]
    ii, jj = np.meshgrid(np.arange(len(new)), np.arange(len(context)), indexing="ij")
    return ii.ravel(), jj.ravel()


def _score_pairs(pot: PotentialTable, new: AtomBlock, other: AtomBlock, i, j) -> Tuple[float, bool]:
    if i.size == 0:
        return 0.0, False
    d = _pair_distances(new.coords[i], other.coords[j])
    keep = (d < pot.max_distance) & ~excluded_pairs(new.residues[i], new.kinds[i], other.residues[j], other.kinds[j])
    if not np.any(keep):
        return 0.0, False
    i, j, d = i[keep], j[keep], d[keep]
    bins = np.minimum((d / pot.bin_width).astype(np.int64), pot.n_bins - 1)
    scores = pot.scores[new.types[i], other.types[j], bins]
    if np.any(scores == pot.sentinel):
        return INF, True
    return float(np.sum(scores)), False


def _cross_energy(new: AtomBlock, other: AtomBlock, pot: PotentialTable, method: str) -> Tuple[float, bool]:
    if len(new) == 0 or len(other) == 0:
        return 0.0, False
    if method == "auto":
        method = "grid" if len(new) * len(other) > AUTO_GRID_PAIRS else "brute"
    if method not in ("grid", "brute"):
        raise ValueError(f"unknown pair search method '{method}'")
    i, j = _candidate_pairs(new, other, pot.max_distance, method)
    return _score_pairs(pot, new, other, i, j)


def _internal_energy(new: AtomBlock, pot: PotentialTable) -> Tuple[float, bool]:
    i, j = np.triu_indices(len(new), k=1)
    return _score_pairs(pot, new, new, i, j)


def pairwise_energy(new_atoms: AtomBlock, context_atoms: AtomBlock, pot: PotentialTable,
                    include_internal: bool = True, method: str = "auto") -> Tuple[float, bool]:
    """Sum of table scores over included new-context (and new-new) pairs.

    Any included pair falling in a sentinel cell gives (inf, True); pairs at or
    beyond the table's max distance contribute nothing.
    """
    h_a, clash = _cross_energy(new_atoms, context_atoms, pot, method)
    if clash:
        return INF, True
    if include_internal:
        internal, clash = _internal_energy(new_atoms, pot)
        if clash:
            return INF, True
        h_a += internal
    return h_a, False


def closure_feasible(c_pos, ca_pos, target_ca, steps_remaining: int, ranges: ClosureRangeTable) -> bool:
    """Both distances to the closure target inside the inclusive ranges for steps_remaining."""
    if steps_remaining < 0:
        raise RangeTableMiss(f"negative steps_remaining {steps_remaining}")
    min_c, max_c, min_ca, max_ca = ranges.row(steps_remaining)
    target = np.asarray(target_ca, dtype=float)
    d_c = float(np.linalg.norm(np.asarray(c_pos, dtype=float) - target))
    d_ca = float(np.linalg.norm(np.asarray(ca_pos, dtype=float) - target))
    return bool(min_c <= d_c <= max_c and min_ca <= d_ca <= max_ca)


# ==================== SEGMENT PROBLEM ====================

@dataclass(frozen=True, eq=False)
class SegmentProblem:
    """Backbone segment [start, end] of one chain rebuilt inside a fixed host.

    Step t places C and O of residue start+t and N, CA of residue start+t+1,
    so T = end - start and the last step reaches residue end+1. The closure
    target is CA of residue end+2.
    """
    host: ProteinStructure
    chain: str
    start: int
    end: int
    anchor: np.ndarray
    target: np.ndarray
    amino_acids: Tuple[str, ...]
    residue_names: Tuple[str, ...]
    context: AtomBlock
    start_key: int
    step_types: np.ndarray

    @property
    def horizon(self) -> int:
        return self.end - self.start

    def step_block(self, t: int, atoms: np.ndarray) -> AtomBlock:
        return AtomBlock(
            np.asarray(atoms, dtype=float),
            self.step_types[t],
            self.start_key + t + PLACED_OFFSETS,
            PLACED_KINDS,
            PLACED_NAMES,
        )

    def placed_block(self, placed: Sequence[np.ndarray]) -> AtomBlock:
        return AtomBlock.concat([self.step_block(t, atoms) for t, atoms in enumerate(placed)])

    def placed_labels(self, n_steps: int) -> List[Tuple[int, str]]:
        """(res_seq, name) of every placed atom for n_steps steps, in block order."""
        labels = []
        for t in range(n_steps):
            for name, offset in zip(PLACED_NAMES, PLACED_OFFSETS):
                labels.append((self.start + t + int(offset), name))
        return labels


def build_segment_problem(structure: ProteinStructure, start: int, end: int, potential: PotentialTable,
                          chain: Optional[str] = None, drop_elements: Sequence[str] = ("H",)) -> SegmentProblem:
    if end < start:
        raise ConfigError(f"segment end {end} precedes start {start}")
    if drop_elements:
        structure = structure.without_elements(drop_elements)
    chain = structure.chains[0] if chain is None else chain
    by_res: Dict[int, str] = dict(structure.residues(chain))
    needed = range(start - 1, end + 3)
    missing = [r for r in needed if r not in by_res]
    if missing:
        raise MissingAtom(f"chain '{chain}' lacks residues {missing} around segment {start}-{end}")

    anchor = np.array([
        structure.find_atom(chain, start - 1, "C").coord,
        structure.find_atom(chain, start, "N").coord,
        structure.find_atom(chain, start, "CA").coord,
    ])
    target = structure.find_atom(chain, end + 2, "CA").coord

    keys = structure.residue_keys()
    keep = []
    start_key = None
    for idx, atom in enumerate(structure.atoms):
        if atom.chain == chain:
            if atom.res_seq == start:
                start_key = int(keys[idx])
                if atom.name in ("C", "O", "OXT"):
                    continue
            if start + 1 <= atom.res_seq <= end + 1:
                continue
        keep.append(idx)
    atoms = [structure.atoms[i] for i in keep]
    context = AtomBlock(
        np.array([[a.x, a.y, a.z] for a in atoms], dtype=float).reshape(-1, 3),
        potential.type_codes([a.name for a in atoms], [a.res_name for a in atoms], [a.element for a in atoms]),
        keys[keep].astype(np.int64),
        np.array([kind_of(a.name) for a in atoms], dtype=np.int64),
        tuple(a.name for a in atoms),
    )

    residue_names = tuple(by_res[r] for r in range(start, end + 2))
    step_types = np.array([
        potential.type_codes(
            list(PLACED_NAMES),
            [residue_names[t], residue_names[t], residue_names[t + 1], residue_names[t + 1]],
            ["C", "O", "N", "C"],
        )
        for t in range(end - start + 1)
    ], dtype=np.int64)

    problem = SegmentProblem(
        host=structure, chain=chain, start=start, end=end, anchor=anchor, target=target,
        amino_acids=residue_names[:-1], residue_names=residue_names, context=context,
        start_key=start_key, step_types=step_types,
    )
    logger.info(f"segment {chain}{start}-{end}: T = {problem.horizon}, {len(context)} context atoms")
    return problem


# ==================== CONFORMATIONS & ENERGY ====================

@dataclass(frozen=True, eq=False)
class PlacedStep:
    """One SMC state of the protein model: the dihedrals and the four atoms they place."""
    triple: DihedralTriple
    atoms: np.ndarray


@dataclass(frozen=True, eq=False)
class BackboneConformation:
    dihedrals: Tuple[DihedralTriple, ...]
    placed: np.ndarray
    anchor: np.ndarray
    amino_acids: Tuple[str, ...]

    @property
    def atoms(self) -> np.ndarray:
        """Anchor atoms followed by the placed quadruples."""
        return np.vstack([self.anchor, self.placed])

    @classmethod
    def from_path(cls, problem: SegmentProblem, path: Sequence[PlacedStep]) -> "BackboneConformation":
        placed = np.vstack([s.atoms for s in path]) if path else np.empty((0, 3))
        return cls(tuple(s.triple for s in path), placed, problem.anchor, problem.amino_acids[: len(path)])

    def measured_dihedrals(self) -> List[DihedralTriple]:
        frame = self.anchor
        out = []
        for t in range(len(self.dihedrals)):
            atoms = self.placed[4 * t: 4 * t + 4]
            out.append(measure_dihedrals(frame, atoms))
            frame = next_frame(atoms)
        return out


@dataclass(frozen=True)
class EnergyBreakdown:
    h_a: float
    h_theta: float
    closure_ok: bool
    total: float

    @classmethod
    def compose(cls, h_a: float, h_theta: float, closure_ok: bool,
                atomic_weight: float = ATOMIC_WEIGHT) -> "EnergyBreakdown":
        total = atomic_weight * h_a + h_theta if closure_ok and math.isfinite(h_a) else INF
        return cls(h_a, h_theta, closure_ok, total)


def frame_after(problem: SegmentProblem, prefix: Sequence[PlacedStep]) -> np.ndarray:
    if not prefix:
        return problem.anchor
    return next_frame(prefix[-1].atoms)


def step_pair_energy(problem: SegmentProblem, prefix: Sequence[PlacedStep], atoms: np.ndarray,
                     potential: PotentialTable, method: str = "auto") -> Tuple[float, bool]:
    """H_a of the atoms placed at step len(prefix) against the host and the earlier steps."""
    t = len(prefix)
    new = problem.step_block(t, atoms)
    host, clash = _cross_energy(new, problem.context, potential, method)
    if clash:
        return INF, True
    earlier, clash = _cross_energy(new, problem.placed_block([s.atoms for s in prefix]), potential, "brute")
    if clash:
        return INF, True
    internal, clash = _internal_energy(new, potential)
    if clash:
        return INF, True
    return host + earlier + internal, False


def incremental_energy(problem: SegmentProblem, conformation_prefix: Sequence[PlacedStep],
                       new_triple: DihedralTriple, tables: EnergyTables,
                       geom: Optional[BackboneGeometry] = None) -> EnergyBreakdown:
    geom = geom or BackboneGeometry()
    atoms = place_next_backbone(frame_after(problem, conformation_prefix), new_triple, geom)
    return _breakdown(problem, conformation_prefix, new_triple, atoms, tables)


def _breakdown(problem: SegmentProblem, prefix: Sequence[PlacedStep], triple: DihedralTriple,
               atoms: np.ndarray, tables: EnergyTables) -> EnergyBreakdown:
    t = len(prefix)
    h_a, _ = step_pair_energy(problem, prefix, atoms, tables.potential)
    closure_ok = closure_feasible(atoms[0], atoms[3], problem.target, problem.horizon - t, tables.closure)
    h_theta = eval_h_theta(triple, problem.amino_acids[t], tables.dihedrals)
    return EnergyBreakdown.compose(h_a, h_theta, closure_ok)


def segment_pair_energy(problem: SegmentProblem, path: Sequence[PlacedStep], potential: PotentialTable,
                        method: str = "auto") -> Tuple[float, bool]:
    """All-at-once H_a of a placed segment against the host and itself."""
    block = problem.placed_block([s.atoms for s in path])
    return pairwise_energy(block, problem.context, potential, include_internal=True, method=method)


# ==================== SEQUENTIAL MODEL ====================

class ProteinSegmentModel(SequentialModel):
    """Boltzmann target over segment dihedrals with the table proposal.

    With eta equal to the dihedral proposal density the H_theta terms cancel and
    the incremental weight is exp(-ATOMIC_WEIGHT * H_a / TEMPERATURE) * I_t.
    """

    def __init__(self, problem: SegmentProblem, tables: EnergyTables,
                 geometry: Optional[BackboneGeometry] = None, pair_method: str = "auto"):
        for aa in problem.amino_acids:
            if aa not in tables.dihedrals:
                raise UnknownAminoAcid(f"no dihedral distribution for segment amino acid '{aa}'")
        if len(tables.closure) <= problem.horizon:
            raise RangeTableMiss(
                f"closure table covers {len(tables.closure)} rows, segment needs {problem.horizon + 1}"
            )
        self.problem = problem
        self.tables = tables
        self.geometry = geometry or BackboneGeometry()
        self.pair_method = pair_method
        self.horizon = problem.horizon
        # spatial index exists before worker threads share the problem
        if len(problem.context):
            _ = problem.context.tree

    def _place(self, prefix: tuple, rng: np.random.Generator) -> PlacedStep:
        t = len(prefix)
        triple = sample_dihedral(self.problem.amino_acids[t], self.tables.dihedrals, rng)
        atoms = place_next_backbone(frame_after(self.problem, prefix), triple, self.geometry)
        return PlacedStep(triple, atoms)

    def _log_weight(self, prefix: tuple, x: PlacedStep) -> float:
        t = len(prefix)
        if not closure_feasible(x.atoms[0], x.atoms[3], self.problem.target,
                                self.horizon - t, self.tables.closure):
            return NEG_INF
        h_a, clash = step_pair_energy(self.problem, prefix, x.atoms, self.tables.potential, self.pair_method)
        if clash:
            return NEG_INF
        return -ATOMIC_WEIGHT * h_a / TEMPERATURE

    def initial_propose(self, rng: np.random.Generator) -> PlacedStep:
        return self._place((), rng)

    def initial_log_increment(self, x0: PlacedStep) -> float:
        return self._log_weight((), x0)

    def propose(self, prefix: tuple, rng: np.random.Generator) -> PlacedStep:
        return self._place(prefix, rng)

    def log_increment(self, prefix: tuple, x: PlacedStep) -> float:
        return self._log_weight(prefix, x)

    def breakdown(self, prefix: tuple, x: PlacedStep) -> EnergyBreakdown:
        return _breakdown(self.problem, prefix, x.triple, x.atoms, self.tables)

    def conformation(self, path: Sequence[PlacedStep]) -> BackboneConformation:
        return BackboneConformation.from_path(self.problem, path)


def as_sequential_model(problem: SegmentProblem, tables: EnergyTables,
                        geometry: Optional[BackboneGeometry] = None) -> ProteinSegmentModel:
    return ProteinSegmentModel(problem, tables, geometry)
