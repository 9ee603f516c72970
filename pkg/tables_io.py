"""
Tables I/O Module
Loading, validating and writing the external inputs of the protein model:
- pairwise potential tables (distance-binned scores with a clash sentinel)
- per amino acid 72 x 72 (phi, psi) bin distributions plus omega parameters
- closure distance ranges keyed by the number of remaining steps
- fixed-column PDB ATOM records
plus generators for synthetic tables and a small synthetic protein.

All table files are UTF-8 text, one record per line, '#' starts a comment, and
the first record is a `format <kind> <version>` line.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import logging
import math
import os

import numpy as np
import pandas as pd

from modules.errors import (
    AsymmetryError, DimensionError, EmptyStructure, MissingAtom, MissingAtomType,
    NonMonotoneRange, NormalizationError, ParseError, RangeTableMiss,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
N_DIHEDRAL_BINS = 72
DIHEDRAL_BIN_DEGREES = 360.0 / N_DIHEDRAL_BINS
NORMALIZATION_TOLERANCE = 1e-6
DEFAULT_SENTINEL = 8.0

DEFAULT_AMINO_ACIDS = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)


# ==================== LINE READER ====================

def _records(path: str) -> Iterable[Tuple[int, List[str]]]:
    """Yield (line_number, tokens) for every non-blank, non-comment line."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"table file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if text:
                yield line_number, text.split()


def _expect_format(records, kind: str, path: str):
    try:
        line_number, tokens = next(records)
    except StopIteration:
        raise ParseError(f"empty file, expected 'format {kind} {FORMAT_VERSION}'", path=path)
    if len(tokens) != 3 or tokens[0] != "format" or tokens[1] != kind:
        raise ParseError(f"expected 'format {kind} {FORMAT_VERSION}'", line_number, path)
    if _to_int(tokens[2], line_number, path) != FORMAT_VERSION:
        raise ParseError(f"unsupported {kind} version {tokens[2]}", line_number, path)


def _to_float(token: str, line_number: int, path: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"not a number: '{token}'", line_number, path)
    if not math.isfinite(value):
        raise ParseError(f"non-finite value '{token}'", line_number, path)
    return value


def _to_int(token: str, line_number: int, path: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"not an integer: '{token}'", line_number, path)


# ==================== ATOM TYPING ====================

@dataclass(frozen=True)
class AtomTyper:
    """Maps structure atoms to potential types.

    Lookup order: "RES:NAME", then "NAME", then the element, then the fallback.
    """
    names: Dict[str, str] = field(default_factory=dict)
    elements: Dict[str, str] = field(default_factory=dict)
    fallback: Optional[str] = None

    def type_of(self, name: str, res_name: str = "", element: str = "") -> str:
        key = f"{res_name}:{name}"
        if key in self.names:
            return self.names[key]
        if name in self.names:
            return self.names[name]
        if element and element in self.elements:
            return self.elements[element]
        if self.fallback is not None:
            return self.fallback
        raise MissingAtomType(f"no potential type for atom {name} of {res_name or '?'} (element {element or '?'})")

    def strict(self) -> "AtomTyper":
        return AtomTyper(dict(self.names), dict(self.elements), None)


# ==================== POTENTIAL TABLE ====================

@dataclass(frozen=True, eq=False)
class PotentialTable:
    types: Tuple[str, ...]
    bin_width: float
    max_distance: float
    scores: np.ndarray
    sentinel: float = DEFAULT_SENTINEL
    typer: AtomTyper = field(default_factory=AtomTyper)

    def __post_init__(self):
        K = len(self.types)
        if self.scores.shape != (K, K, self.n_bins):
            raise DimensionError(f"score array has shape {self.scores.shape}, expected {(K, K, self.n_bins)}")
        if not np.all(np.isfinite(self.scores)):
            raise ParseError("potential scores must be finite")
        if not np.array_equal(self.scores, self.scores.transpose(1, 0, 2)):
            raise AsymmetryError("potential table is not symmetric in the atom types")
        self.scores.setflags(write=False)

    @property
    def n_bins(self) -> int:
        return int(round(self.max_distance / self.bin_width))

    @property
    def clash_mask(self) -> np.ndarray:
        return self.scores == self.sentinel

    @property
    def type_index(self) -> Dict[str, int]:
        return {t: i for i, t in enumerate(self.types)}

    def type_codes(self, names: Sequence[str], res_names: Sequence[str], elements: Sequence[str]) -> np.ndarray:
        index = self.type_index
        codes = np.empty(len(names), dtype=np.int64)
        for k, (name, res, el) in enumerate(zip(names, res_names, elements)):
            t = self.typer.type_of(name, res, el)
            if t not in index:
                raise MissingAtomType(f"atom type '{t}' for {res}:{name} is not in the potential vocabulary")
            codes[k] = index[t]
        return codes

    def score(self, type_i: str, type_j: str, distance: float) -> float:
        if distance >= self.max_distance:
            return 0.0
        index = self.type_index
        return float(self.scores[index[type_i], index[type_j], int(distance // self.bin_width)])


_POTENTIAL_HEADER = ("types", "bin_width", "max_distance", "sentinel", "atom", "element", "fallback")


def load_potential_table(path: str, strict_typing: bool = False) -> PotentialTable:
    """Read a potential table; entries are `TYPE_I TYPE_J BIN SCORE` and are mirrored."""
    records = _records(path)
    _expect_format(records, "smc-potential", path)
    header = {"sentinel": DEFAULT_SENTINEL}
    names, elements, fallback = {}, {}, None
    entries = []
    for line_number, tokens in records:
        key = tokens[0]
        if key == "types":
            if len(tokens) < 2:
                raise ParseError("'types' needs at least one atom type", line_number, path)
            if len(set(tokens[1:])) != len(tokens) - 1:
                raise ParseError("duplicate atom type in vocabulary", line_number, path)
            header["types"] = tuple(tokens[1:])
        elif key in ("bin_width", "max_distance", "sentinel"):
            if len(tokens) != 2:
                raise ParseError(f"'{key}' takes one value", line_number, path)
            header[key] = _to_float(tokens[1], line_number, path)
        elif key == "atom":
            if len(tokens) != 3:
                raise ParseError("'atom' takes a name (or RES:NAME) and a type", line_number, path)
            names[tokens[1]] = tokens[2]
        elif key == "element":
            if len(tokens) != 3:
                raise ParseError("'element' takes an element symbol and a type", line_number, path)
            elements[tokens[1]] = tokens[2]
        elif key == "fallback":
            if len(tokens) != 2:
                raise ParseError("'fallback' takes one type", line_number, path)
            fallback = tokens[1]
        else:
            entries.append((line_number, tokens))

    for required in ("types", "bin_width", "max_distance"):
        if required not in header:
            raise ParseError(f"missing header field '{required}'", path=path)
    types = header["types"]
    bin_width, max_distance = header["bin_width"], header["max_distance"]
    if bin_width <= 0 or max_distance <= 0:
        raise ParseError("bin_width and max_distance must be positive", path=path)
    n_bins = max_distance / bin_width
    if abs(n_bins - round(n_bins)) > 1e-9:
        raise ParseError("max_distance must be a whole number of bins", path=path)
    n_bins = int(round(n_bins))

    index = {t: i for i, t in enumerate(types)}
    for mapped in list(names.values()) + list(elements.values()) + ([fallback] if fallback else []):
        if mapped not in index:
            raise ParseError(f"atom mapping refers to unknown type '{mapped}'", path=path)

    K = len(types)
    scores = np.zeros((K, K, n_bins))
    origin: Dict[Tuple[int, int, int], Tuple[int, int]] = {}
    for line_number, tokens in entries:
        if len(tokens) != 4:
            raise ParseError("expected 'TYPE_I TYPE_J BIN SCORE'", line_number, path)
        ti, tj = tokens[0], tokens[1]
        if ti not in index or tj not in index:
            raise ParseError(f"unknown atom type in '{ti} {tj}'", line_number, path)
        b = _to_int(tokens[2], line_number, path)
        if not 0 <= b < n_bins:
            raise ParseError(f"bin {b} outside 0..{n_bins - 1}", line_number, path)
        value = _to_float(tokens[3], line_number, path)
        i, j = index[ti], index[tj]
        previous = origin.get((i, j, b))
        if previous is not None and scores[i, j, b] != value:
            if previous == (i, j):
                raise ParseError(f"duplicate entry for {ti} {tj} bin {b}", line_number, path)
            raise AsymmetryError(f"{path}:{line_number}: conflicting mirrored entry for {ti} {tj} bin {b}")
        scores[i, j, b] = scores[j, i, b] = value
        origin[(i, j, b)] = origin[(j, i, b)] = (i, j)

    typer = AtomTyper(names, elements, None if strict_typing else fallback)
    table = PotentialTable(types, bin_width, max_distance, scores, header["sentinel"], typer)
    logger.info(f"loaded potential table {path}: {K} types, {n_bins} bins, "
                f"{int(table.clash_mask.sum())} clash cells")
    return table


def write_potential_table(table: PotentialTable, path: str) -> str:
    lines = [
        f"format smc-potential {FORMAT_VERSION}",
        "types " + " ".join(table.types),
        f"bin_width {table.bin_width!r}",
        f"max_distance {table.max_distance!r}",
        f"sentinel {table.sentinel!r}",
    ]
    for key, value in table.typer.names.items():
        lines.append(f"atom {key} {value}")
    for key, value in table.typer.elements.items():
        lines.append(f"element {key} {value}")
    if table.typer.fallback is not None:
        lines.append(f"fallback {table.typer.fallback}")
    lines.append("# type_i type_j bin score")
    K = len(table.types)
    for i in range(K):
        for j in range(i, K):
            for b in np.flatnonzero(table.scores[i, j] != 0.0):
                lines.append(f"{table.types[i]} {table.types[j]} {int(b)} {float(table.scores[i, j, b])!r}")
    _write_lines(path, lines)
    return path


# ==================== DIHEDRAL DISTRIBUTIONS ====================

@dataclass(frozen=True, eq=False)
class DihedralDistributionSet:
    """Per amino acid 72 x 72 (phi bin, psi bin) probabilities and the omega normal."""
    matrices: Dict[str, np.ndarray]
    omega_mean: float = 180.0
    omega_sd: float = 3.0

    def __post_init__(self):
        cdfs = {}
        for aa, m in self.matrices.items():
            if m.shape != (N_DIHEDRAL_BINS, N_DIHEDRAL_BINS):
                raise DimensionError(f"{aa}: matrix shape {m.shape}, expected 72 x 72")
            m.setflags(write=False)
            cdf = np.cumsum(m.ravel())
            cdf /= cdf[-1]
            cdfs[aa] = cdf
        if self.omega_sd <= 0:
            raise ParseError("omega_sd must be positive")
        object.__setattr__(self, "_cdfs", cdfs)

    def cdf(self, aa: str) -> np.ndarray:
        """Cumulative bin masses in row-major (phi, psi) order."""
        return self._cdfs[aa]

    @property
    def amino_acids(self) -> Tuple[str, ...]:
        return tuple(self.matrices)

    def __contains__(self, aa: str) -> bool:
        return aa in self.matrices


def _check_distribution(aa: str, matrix: np.ndarray, path: str) -> np.ndarray:
    if np.any(matrix < 0):
        raise NormalizationError(f"{path}: {aa} has negative entries")
    total = float(matrix.sum())
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise NormalizationError(f"{path}: {aa} sums to {total:.9g}")
    if abs(total - 1.0) > 1e-12:
        logger.warning(f"{aa} dihedral matrix sums to {total:.12g}; renormalized")
        matrix = matrix / total
    return matrix


def load_dihedral_tables(path: str) -> DihedralDistributionSet:
    """Read `residue AA` blocks of 72 rows x 72 columns (rows: phi bins, columns: psi bins)."""
    records = _records(path)
    _expect_format(records, "smc-dihedral", path)
    omega = {"omega_mean": 180.0, "omega_sd": 3.0}
    blocks: Dict[str, List[List[float]]] = {}
    current = None
    for line_number, tokens in records:
        key = tokens[0]
        if key in omega:
            if len(tokens) != 2:
                raise ParseError(f"'{key}' takes one value", line_number, path)
            omega[key] = _to_float(tokens[1], line_number, path)
        elif key == "residue":
            if len(tokens) != 2:
                raise ParseError("'residue' takes one amino-acid name", line_number, path)
            current = tokens[1]
            if current in blocks:
                raise ParseError(f"duplicate residue block {current}", line_number, path)
            blocks[current] = []
        else:
            if current is None:
                raise ParseError("matrix row before any 'residue' line", line_number, path)
            if len(tokens) != N_DIHEDRAL_BINS:
                raise DimensionError(f"{path}:{line_number}: {len(tokens)} columns, expected 72")
            blocks[current].append([_to_float(t, line_number, path) for t in tokens])
    if not blocks:
        raise ParseError("no residue blocks", path=path)

    matrices = {}
    for aa, rows in blocks.items():
        if len(rows) != N_DIHEDRAL_BINS:
            raise DimensionError(f"{path}: {aa} has {len(rows)} rows, expected 72")
        matrices[aa] = _check_distribution(aa, np.array(rows, dtype=float), path)
    tables = DihedralDistributionSet(matrices, omega["omega_mean"], omega["omega_sd"])
    logger.info(f"loaded dihedral tables {path}: {len(matrices)} amino acids")
    return tables


def write_dihedral_tables(tables: DihedralDistributionSet, path: str) -> str:
    lines = [
        f"format smc-dihedral {FORMAT_VERSION}",
        f"omega_mean {tables.omega_mean!r}",
        f"omega_sd {tables.omega_sd!r}",
    ]
    for aa, m in tables.matrices.items():
        lines.append(f"residue {aa}")
        for row in m:
            lines.append(" ".join(repr(float(v)) for v in row))
    _write_lines(path, lines)
    return path


# ==================== CLOSURE RANGES ====================

CLOSURE_COLUMNS = ("min_C", "max_C", "min_CA", "max_CA")


@dataclass(frozen=True, eq=False)
class ClosureRangeTable:
    """Row k holds (min_C, max_C, min_CA, max_CA) for k steps remaining."""
    rows: np.ndarray

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[1] != 4:
            raise DimensionError(f"closure rows must have 4 columns, got shape {self.rows.shape}")
        self.rows.setflags(write=False)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def row(self, steps_remaining: int) -> np.ndarray:
        if not 0 <= steps_remaining < len(self):
            raise RangeTableMiss(f"no closure range for {steps_remaining} remaining steps (table covers 0..{len(self) - 1})")
        return self.rows[steps_remaining]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=list(CLOSURE_COLUMNS))
        frame.index.name = "steps_remaining"
        return frame


def load_closure_ranges(path: str) -> ClosureRangeTable:
    """Read `K MIN_C MAX_C MIN_CA MAX_CA` rows with K = 0, 1, 2, ... in order."""
    records = _records(path)
    _expect_format(records, "smc-closure", path)
    rows = []
    for line_number, tokens in records:
        if len(tokens) != 5:
            raise ParseError("expected 'K MIN_C MAX_C MIN_CA MAX_CA'", line_number, path)
        k = _to_int(tokens[0], line_number, path)
        if k != len(rows):
            raise ParseError(f"steps_remaining {k} out of order, expected {len(rows)}", line_number, path)
        values = [_to_float(t, line_number, path) for t in tokens[1:]]
        if values[0] > values[1] or values[2] > values[3]:
            raise NonMonotoneRange(f"{path}:{line_number}: min exceeds max for steps_remaining {k}")
        if min(values) < 0:
            raise NonMonotoneRange(f"{path}:{line_number}: negative distance bound")
        rows.append(values)
    if not rows:
        raise ParseError("no closure rows", path=path)
    return ClosureRangeTable(np.array(rows, dtype=float))


def write_closure_ranges(table: ClosureRangeTable, path: str) -> str:
    lines = [f"format smc-closure {FORMAT_VERSION}", "# steps_remaining " + " ".join(CLOSURE_COLUMNS)]
    for k, row in enumerate(table.rows):
        lines.append(f"{k} " + " ".join(repr(float(v)) for v in row))
    _write_lines(path, lines)
    return path


@dataclass(frozen=True, eq=False)
class EnergyTables:
    potential: PotentialTable
    dihedrals: DihedralDistributionSet
    closure: ClosureRangeTable


def load_energy_tables(potential_path: str, dihedral_path: str, closure_path: str,
                       strict_typing: bool = False) -> EnergyTables:
    return EnergyTables(
        load_potential_table(potential_path, strict_typing),
        load_dihedral_tables(dihedral_path),
        load_closure_ranges(closure_path),
    )


# ==================== PDB ====================

@dataclass(frozen=True)
class AtomRecord:
    serial: int
    name: str
    res_name: str
    chain: str
    res_seq: int
    x: float
    y: float
    z: float
    element: str
    alt_loc: str = ""
    i_code: str = ""
    occupancy: float = 1.0
    b_factor: float = 0.0

    @property
    def coord(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def residue_id(self) -> Tuple[str, int, str]:
        return (self.chain, self.res_seq, self.i_code)


@dataclass(frozen=True, eq=False)
class ProteinStructure:
    atoms: Tuple[AtomRecord, ...]

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def coords(self) -> np.ndarray:
        return np.array([[a.x, a.y, a.z] for a in self.atoms], dtype=float).reshape(-1, 3)

    @property
    def chains(self) -> List[str]:
        return list(dict.fromkeys(a.chain for a in self.atoms))

    def residue_keys(self) -> np.ndarray:
        """Integer id per atom, unique per (chain, resSeq, iCode) across the structure.

        Keys of consecutive residues of one chain differ by one; a chain change or
        a numbering gap skips a key, so key + 1 always means the bonded successor.
        """
        keys: Dict[Tuple[str, int, str], int] = {}
        out = np.empty(len(self.atoms), dtype=np.int64)
        next_key = 0
        previous = None
        for k, atom in enumerate(self.atoms):
            rid = atom.residue_id
            if rid not in keys:
                if previous is not None and (previous[0] != rid[0] or rid[1] - previous[1] > 1):
                    next_key += 1
                keys[rid] = next_key
                next_key += 1
                previous = rid
            out[k] = keys[rid]
        return out

    def residues(self, chain: Optional[str] = None) -> List[Tuple[int, str]]:
        seen = {}
        for a in self.atoms:
            if chain is None or a.chain == chain:
                seen.setdefault((a.chain, a.res_seq, a.i_code), a.res_name)
        return [(key[1], name) for key, name in seen.items()]

    def find_atom(self, chain: str, res_seq: int, name: str) -> AtomRecord:
        for a in self.atoms:
            if a.chain == chain and a.res_seq == res_seq and a.name == name:
                return a
        raise MissingAtom(f"atom {name} of residue {chain}{res_seq} not found")

    def without_elements(self, elements: Iterable[str]) -> "ProteinStructure":
        drop = {e.upper() for e in elements}
        return ProteinStructure(tuple(a for a in self.atoms if a.element.upper() not in drop))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([a.__dict__ for a in self.atoms])


def _infer_element(name: str) -> str:
    letters = "".join(ch for ch in name if ch.isalpha())
    return letters[:1].upper() if letters else ""


def _parse_atom_line(line: str, line_number: int, path: str) -> AtomRecord:
    line = line.rstrip("\n").ljust(80)
    try:
        serial = int(line[6:11])
        res_seq = int(line[22:26])
        x, y, z = float(line[30:38]), float(line[38:46]), float(line[46:54])
    except ValueError:
        raise ParseError("malformed ATOM record", line_number, path)
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise ParseError("non-finite coordinate", line_number, path)
    occupancy = line[54:60].strip()
    b_factor = line[60:66].strip()
    name = line[12:16].strip()
    if not name:
        raise ParseError("missing atom name", line_number, path)
    element = line[76:78].strip() or _infer_element(name)
    try:
        return AtomRecord(
            serial=serial, name=name, res_name=line[17:20].strip(), chain=line[21].strip(),
            res_seq=res_seq, x=x, y=y, z=z, element=element.upper() if len(element) == 1 else element.capitalize(),
            alt_loc=line[16].strip(), i_code=line[26].strip(),
            occupancy=float(occupancy) if occupancy else 1.0,
            b_factor=float(b_factor) if b_factor else 0.0,
        )
    except ValueError:
        raise ParseError("malformed occupancy or temperature factor", line_number, path)


def parse_pdb(path: str, drop_elements: Iterable[str] = ()) -> ProteinStructure:
    """Parse ATOM records only; every other record type is ignored."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"structure file not found: {path}")
    atoms = []
    last_seq: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.startswith("ATOM"):
                continue
            atom = _parse_atom_line(line, line_number, path)
            previous = last_seq.get(atom.chain)
            if previous is not None and atom.res_seq < previous:
                raise ParseError(f"residue numbering decreases in chain '{atom.chain}'", line_number, path)
            last_seq[atom.chain] = atom.res_seq
            atoms.append(atom)
    structure = ProteinStructure(tuple(atoms))
    drop = tuple(drop_elements)
    if drop:
        structure = structure.without_elements(drop)
    if not structure.atoms:
        raise EmptyStructure(f"{path}: no ATOM records")
    logger.info(f"parsed {path}: {len(structure)} atoms in chains {structure.chains}")
    return structure


def _format_atom_name(name: str, element: str) -> str:
    if len(name) >= 4 or len(element) == 2:
        return name.ljust(4)[:4]
    return " " + name.ljust(3)


def format_atom_line(atom: AtomRecord) -> str:
    return (
        f"ATOM  {atom.serial:5d} {_format_atom_name(atom.name, atom.element)}"
        f"{atom.alt_loc or ' ':1s}{atom.res_name:>3s} {atom.chain or ' ':1s}"
        f"{atom.res_seq:4d}{atom.i_code or ' ':1s}   "
        f"{atom.x:8.3f}{atom.y:8.3f}{atom.z:8.3f}{atom.occupancy:6.2f}{atom.b_factor:6.2f}"
        f"          {atom.element:>2s}"
    )


def write_pdb(structure: ProteinStructure, path: str) -> str:
    lines = [format_atom_line(a) for a in structure.atoms]
    lines.append("END")
    _write_lines(path, lines)
    return path


# ==================== SYNTHETIC DATA ====================

@dataclass(frozen=True)
class SyntheticTableSpec:
    """Knobs of the synthetic tables.

    `smoothness` is the width (Angstrom) of the attractive wells and
    `concentration` the von Mises concentration of the (phi, psi) modes.
    """
    types: Tuple[str, ...] = ("N", "CA", "C", "O", "CB")
    bin_width: float = 0.5
    max_distance: float = 15.0
    clash_distance: float = 2.0
    well_depth: float = 1.0
    smoothness: float = 1.2
    concentration: float = 4.0
    amino_acids: Tuple[str, ...] = DEFAULT_AMINO_ACIDS
    closure_steps: int = 40
    closure_slack: float = 0.0
    omega_mean: float = 180.0
    omega_sd: float = 3.0

    @classmethod
    def from_dict(cls, params: dict) -> "SyntheticTableSpec":
        kwargs = dict(params)
        for key in ("types", "amino_acids"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class SyntheticTableFiles:
    potential: str
    dihedrals: str
    closure: str


# Ramachandran-like mode centers (phi, psi) in degrees.
HELIX_MODE = (-63.0, -43.0)
SHEET_MODE = (-120.0, 130.0)
LEFT_MODE = (57.0, 47.0)


def default_typer() -> AtomTyper:
    return AtomTyper(
        names={"N": "N", "CA": "CA", "C": "C", "O": "O", "OXT": "O", "CB": "CB"},
        elements={"C": "CB", "N": "N", "O": "O", "S": "CB"},
        fallback="CB",
    )


def synthetic_potential(spec: SyntheticTableSpec, rng: np.random.Generator) -> PotentialTable:
    K = len(spec.types)
    n_bins = int(round(spec.max_distance / spec.bin_width))
    centers = (np.arange(n_bins) + 0.5) * spec.bin_width
    lower_edges = np.arange(n_bins) * spec.bin_width
    scores = np.zeros((K, K, n_bins))
    for i in range(K):
        for j in range(i, K):
            depth = spec.well_depth * rng.uniform(0.5, 1.5)
            r0 = rng.uniform(3.5, 6.0)
            well = -depth * np.exp(-0.5 * ((centers - r0) / spec.smoothness) ** 2)
            well[lower_edges < spec.clash_distance] = DEFAULT_SENTINEL
            scores[i, j] = well
            scores[j, i] = well
    types = tuple(spec.types)
    typer = default_typer()
    if not set(typer.names.values()) <= set(types):
        typer = AtomTyper({t: t for t in types}, {}, types[-1])
    return PotentialTable(types, spec.bin_width, spec.max_distance, scores, DEFAULT_SENTINEL, typer)


def _mode_density(center: Tuple[float, float], kappa: float) -> np.ndarray:
    bin_centers = np.radians(-180.0 + DIHEDRAL_BIN_DEGREES * (np.arange(N_DIHEDRAL_BINS) + 0.5))
    phi = np.exp(kappa * np.cos(bin_centers - np.radians(center[0])))
    psi = np.exp(kappa * np.cos(bin_centers - np.radians(center[1])))
    return np.outer(phi, psi)


def synthetic_dihedrals(spec: SyntheticTableSpec, rng: np.random.Generator) -> DihedralDistributionSet:
    matrices = {}
    for aa in spec.amino_acids:
        modes = [HELIX_MODE, SHEET_MODE]
        if aa == "GLY" or rng.uniform() < 0.5:
            modes.append(LEFT_MODE)
        mix = rng.dirichlet(np.full(len(modes), 2.0))
        density = sum(w * _mode_density(c, spec.concentration) for w, c in zip(mix, modes))
        matrices[aa] = density / density.sum()
    return DihedralDistributionSet(matrices, spec.omega_mean, spec.omega_sd)


def synthetic_closure_ranges(spec: SyntheticTableSpec, geometry=None) -> ClosureRangeTable:
    """Triangle-inequality ranges from the virtual Calpha-Calpha bond limits.

    max_CA(k) = (k + 1) * trans span, min_CA(0) = cis span, min_CA(k > 0) = 0;
    the C distance adds or subtracts the fixed C(t)-CA(t+1) separation.
    """
    from protein_model import BackboneGeometry, virtual_bond_length

    geometry = geometry or BackboneGeometry()
    span_max = virtual_bond_length(geometry, 180.0)
    span_min = virtual_bond_length(geometry, 0.0)
    c_to_ca = geometry.c_to_next_ca
    slack = spec.closure_slack
    rows = []
    for k in range(spec.closure_steps):
        max_ca = (k + 1) * span_max + slack
        min_ca = max(0.0, span_min - slack) if k == 0 else 0.0
        rows.append([max(0.0, min_ca - c_to_ca), max_ca + c_to_ca, min_ca, max_ca])
    return ClosureRangeTable(np.array(rows))


def generate_synthetic_tables(spec: SyntheticTableSpec, seed: int, out_dir: str,
                              geometry=None) -> SyntheticTableFiles:
    """Write potential.txt, dihedrals.txt and closure.txt under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    potential = synthetic_potential(spec, rng)
    dihedrals = synthetic_dihedrals(spec, rng)
    closure = synthetic_closure_ranges(spec, geometry)
    files = SyntheticTableFiles(
        potential=write_potential_table(potential, os.path.join(out_dir, "potential.txt")),
        dihedrals=write_dihedral_tables(dihedrals, os.path.join(out_dir, "dihedrals.txt")),
        closure=write_closure_ranges(closure, os.path.join(out_dir, "closure.txt")),
    )
    logger.info(f"synthetic tables written to {out_dir} (seed {seed})")
    return files


def generate_mini_protein(sequence: Sequence[str], seed: int, out_path: str,
                          geometry=None, chain: str = "A") -> ProteinStructure:
    """Helical backbone with CB atoms for `sequence`, written as a PDB file."""
    from protein_model import BackboneGeometry, DihedralTriple, build_backbone, place_atom

    geometry = geometry or BackboneGeometry()
    rng = np.random.default_rng(seed)
    n = len(sequence)
    if n < 1:
        raise ValueError("sequence must contain at least one residue")
    triples = [
        DihedralTriple(HELIX_MODE[0] + rng.normal(0, 4), HELIX_MODE[1] + rng.normal(0, 4), 180.0 + rng.normal(0, 2))
        for _ in range(n)
    ]
    anchor = geometry.reference_frame()
    placed = build_backbone(anchor, triples, geometry)

    atoms: List[AtomRecord] = []
    serial = 1

    def add(name, res_index, pos):
        nonlocal serial
        atoms.append(AtomRecord(serial, name, sequence[res_index], chain, res_index + 1,
                                float(round(pos[0], 3)), float(round(pos[1], 3)), float(round(pos[2], 3)),
                                _infer_element(name)))
        serial += 1

    n_pos, ca_pos = anchor[1], anchor[2]
    for i in range(n):
        c_pos, o_pos, next_n, next_ca = placed[i]
        add("N", i, n_pos)
        add("CA", i, ca_pos)
        add("C", i, c_pos)
        add("O", i, o_pos)
        if sequence[i] != "GLY":
            add("CB", i, place_atom(c_pos, n_pos, ca_pos, geometry.ca_cb, geometry.n_ca_cb, geometry.cb_torsion))
        n_pos, ca_pos = next_n, next_ca

    structure = ProteinStructure(tuple(atoms))
    write_pdb(structure, out_path)
    logger.info(f"mini-protein with {n} residues written to {out_path}")
    return structure


def _write_lines(path: str, lines: Sequence[str]) -> None:
    dir_name = os.path.dirname(path)
    if dir_name:
        os.makedirs(dir_name, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
