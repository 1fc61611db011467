"""Protein sequences, alpha-carbon coordinates, and the corpus that binds them.

Formats handled here:

* FASTA with ``>`` headers (multi-line sequences are folded together).
* PDB ``ATOM`` records, fixed-width columns; only ``CA`` atoms of the first
  chain of the first model are read.
* A TSV coordinate format, one residue per line: ``index<TAB>x<TAB>y<TAB>z``.
* A corpus manifest, one protein per line: ``id<TAB>seq_path<TAB>coord_path``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

STANDARD_RESIDUES = "ACDEFGHIKLMNPQRSTVWY"
EXTRA_RESIDUES = "XUZBO"
RESIDUES = STANDARD_RESIDUES + EXTRA_RESIDUES
SPECIAL_TOKENS = ("[PAD]", "[MASK]", "[CLS]", "[SEP]")

# token ids: specials first, then the 25 residue letters
VOCAB = SPECIAL_TOKENS + tuple(RESIDUES)
TOKEN_TO_ID = {tok: i for i, tok in enumerate(VOCAB)}
PAD_ID, MASK_ID, CLS_ID, SEP_ID = range(4)
STANDARD_IDS = tuple(TOKEN_TO_ID[aa] for aa in STANDARD_RESIDUES)

THREE_TO_ONE = {
    "ALA": "A", "ARG": "R", "ASN": "N", "ASP": "D", "CYS": "C",
    "GLN": "Q", "GLU": "E", "GLY": "G", "HIS": "H", "ILE": "I",
    "LEU": "L", "LYS": "K", "MET": "M", "PHE": "F", "PRO": "P",
    "SER": "S", "THR": "T", "TRP": "W", "TYR": "Y", "VAL": "V",
    "SEC": "U", "PYL": "O", "ASX": "B", "GLX": "Z", "UNK": "X",
}
ONE_TO_THREE = {v: k for k, v in THREE_TO_ONE.items()}


class ProteinIOError(ValueError):
    """Malformed or inconsistent protein input."""


def tokenize(sequence: str) -> list[int]:
    return [TOKEN_TO_ID[aa] for aa in sequence]


def detokenize(tokens: Iterable[int]) -> str:
    return "".join(VOCAB[t] if len(VOCAB[t]) == 1 else "X" for t in tokens)


def normalize_sequence(raw: str) -> str:
    """Uppercase and map letters outside the 25-symbol alphabet to ``X``."""
    out = []
    for ch in raw.upper():
        if ch.isspace():
            continue
        out.append(ch if ch in RESIDUES else "X")
    return "".join(out)


@dataclass(frozen=True, eq=False)
class ProteinRecord:
    id: str
    sequence: str
    ca_coords: np.ndarray | None = None

    def __post_init__(self):
        if not self.id:
            raise ProteinIOError("record id must be non-empty")
        if len(self.sequence) < 2:
            raise ProteinIOError(f"{self.id}: sequence length {len(self.sequence)} < 2")
        bad = set(self.sequence) - set(RESIDUES)
        if bad:
            raise ProteinIOError(f"{self.id}: symbols outside alphabet: {sorted(bad)}")
        if self.ca_coords is not None:
            coords = np.asarray(self.ca_coords, dtype=np.float64)
            if coords.ndim != 2 or coords.shape[1] != 3:
                raise ProteinIOError(f"{self.id}: coordinates must be shaped (L, 3), got {coords.shape}")
            if coords.shape[0] != len(self.sequence):
                raise ProteinIOError(
                    f"{self.id}: {coords.shape[0]} coordinates for {len(self.sequence)} residues"
                )
            if not np.all(np.isfinite(coords)):
                raise ProteinIOError(f"{self.id}: non-finite coordinate")
            coords.setflags(write=False)
            object.__setattr__(self, "ca_coords", coords)

    def __len__(self):
        return len(self.sequence)

    def __eq__(self, other):
        if not isinstance(other, ProteinRecord):
            return NotImplemented
        if self.id != other.id or self.sequence != other.sequence:
            return False
        if self.ca_coords is None or other.ca_coords is None:
            return self.ca_coords is None and other.ca_coords is None
        return bool(np.array_equal(self.ca_coords, other.ca_coords))

    __hash__ = None

    @property
    def has_coords(self) -> bool:
        return self.ca_coords is not None

    @property
    def tokens(self) -> list[int]:
        return tokenize(self.sequence)

    def with_coords(self, coords) -> "ProteinRecord":
        return ProteinRecord(self.id, self.sequence, np.array(coords, dtype=np.float64))


@dataclass(frozen=True)
class Corpus:
    records: tuple[ProteinRecord, ...]
    index: Mapping[str, int] = field(default=None, repr=False)

    def __post_init__(self):
        records = tuple(self.records)
        index = {}
        for pos, rec in enumerate(records):
            if rec.id in index:
                raise ProteinIOError(f"duplicate id in corpus: {rec.id}")
            index[rec.id] = pos
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, pid):
        return pid in self.index

    def __getitem__(self, pid: str) -> ProteinRecord:
        try:
            return self.records[self.index[pid]]
        except KeyError:
            raise KeyError(f"unknown protein id: {pid}") from None

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def structured(self) -> "Corpus":
        """Sub-corpus of records that carry coordinates."""
        return Corpus(tuple(r for r in self.records if r.has_coords))


# --------------------------------------------------------------------------
# FASTA


def parse_fasta(text: str) -> list[ProteinRecord]:
    records: list[ProteinRecord] = []
    header = None
    chunks: list[str] = []

    def flush():
        if header is None:
            return
        seq = normalize_sequence("".join(chunks))
        if not seq:
            raise ProteinIOError(f"record {header!r} has an empty sequence")
        records.append(ProteinRecord(header, seq))

    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith(">"):
            flush()
            fields = line[1:].split()
            if not fields:
                raise ProteinIOError(f"line {lineno}: malformed header {line!r}")
            header, chunks = fields[0], []
        else:
            if header is None:
                raise ProteinIOError(f"line {lineno}: sequence data before first '>' header")
            chunks.append(line)
    flush()
    if not records:
        raise ProteinIOError("no FASTA records found")
    return records


def write_fasta(records: Iterable[ProteinRecord], width: int = 60) -> str:
    lines = []
    for rec in records:
        lines.append(f">{rec.id}")
        for start in range(0, len(rec.sequence), width):
            lines.append(rec.sequence[start:start + width])
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# coordinates


def _iter_pdb_ca(text: str):
    """Yield (resseq, resname, xyz) for CA atoms of the first chain."""
    chain = None
    for lineno, line in enumerate(text.splitlines(), 1):
        record = line[0:6].strip()
        if record == "ENDMDL":
            break
        if record == "TER" and chain is not None:
            break
        if record != "ATOM":
            continue
        if line[12:16].strip() != "CA":
            continue
        if line[16:17] not in (" ", "A", ""):
            continue  # alternate location other than the first
        this_chain = line[21:22]
        if chain is None:
            chain = this_chain
        elif this_chain != chain:
            break
        try:
            resseq = int(line[22:26])
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError:
            raise ProteinIOError(f"line {lineno}: non-numeric field in {line!r}") from None
        yield resseq, line[17:20].strip(), xyz


def _iter_tsv(text: str):
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ProteinIOError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        try:
            idx = int(parts[0])
            xyz = tuple(float(p) for p in parts[1:])
        except ValueError:
            raise ProteinIOError(f"line {lineno}: non-numeric field in {line!r}") from None
        yield idx, None, xyz


def _collect(rows, what: str):
    out = []
    seen = set()
    for idx, _, xyz in rows:
        if idx in seen:
            raise ProteinIOError(f"duplicate residue index {idx}")
        if not all(math.isfinite(v) for v in xyz):
            raise ProteinIOError(f"non-finite coordinate at residue {idx}")
        seen.add(idx)
        out.append((idx, xyz))
    if not out:
        raise ProteinIOError(f"no CA atoms found in {what} input")
    return out


def parse_ca_coords(text: str, format: str = "pdb_atom") -> list[tuple[int, tuple[float, float, float]]]:
    """Residue-indexed CA coordinates in file order.

    ``format`` is ``"pdb_atom"`` or ``"tsv"``.
    """
    if format == "pdb_atom":
        return _collect(_iter_pdb_ca(text), format)
    if format == "tsv":
        return _collect(_iter_tsv(text), format)
    raise ProteinIOError(f"unknown coordinate format {format!r}")


def read_pdb_record(text: str, pid: str) -> ProteinRecord:
    """Sequence and coordinates taken together from the CA atoms of a PDB file."""
    rows = list(_iter_pdb_ca(text))
    coords = _collect(rows, "pdb_atom")
    seq = "".join(THREE_TO_ONE.get(name, "X") for _, name, _ in rows)
    return ProteinRecord(pid, seq, np.array([xyz for _, xyz in coords]))


def write_pdb_ca(coords, sequence: str | None = None, chain: str = "A") -> str:
    """Serialize ``(index, xyz)`` pairs (or a bare (L, 3) array) as CA ATOM lines."""
    coords = _as_indexed(coords)
    lines = []
    for serial, (idx, (x, y, z)) in enumerate(coords, 1):
        aa = sequence[serial - 1] if sequence else "G"
        resname = ONE_TO_THREE.get(aa, "UNK")
        lines.append(
            f"ATOM  {serial:5d}  CA  {resname:>3s} {chain:1s}{idx:4d}    "
            f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           C"
        )
    lines.append("TER")
    lines.append("END")
    return "\n".join(lines) + "\n"


def write_tsv_coords(coords) -> str:
    coords = _as_indexed(coords)
    return "".join(f"{idx}\t{x!r}\t{y!r}\t{z!r}\n" for idx, (x, y, z) in coords)


def _as_indexed(coords):
    if isinstance(coords, np.ndarray):
        return [(i, tuple(float(v) for v in row)) for i, row in enumerate(coords)]
    return [(int(i), tuple(float(v) for v in xyz)) for i, xyz in coords]


def coord_format_for(path: str | Path) -> str:
    return "pdb_atom" if Path(path).suffix.lower() in (".pdb", ".ent") else "tsv"


# --------------------------------------------------------------------------
# binding


def bind(
    sequences: Sequence[ProteinRecord],
    coord_sets: Mapping[str, Sequence[tuple[int, Sequence[float]]]],
) -> tuple[Corpus, list[str]]:
    """Attach coordinate sets to sequences by id.

    Returns the corpus plus human-readable diagnostics. A record whose
    coordinate count disagrees with its sequence length is dropped; a record
    whose residue numbering has gaps is kept without coordinates. Coordinates
    for an id with no sequence raise.
    """
    known = {r.id for r in sequences}
    unknown = sorted(set(coord_sets) - known)
    if unknown:
        raise ProteinIOError(f"coordinates given for unknown id(s): {', '.join(unknown)}")

    diagnostics = []
    records = []
    for rec in sequences:
        rows = coord_sets.get(rec.id)
        if rows is None:
            records.append(rec)
            continue
        if len(rows) != len(rec.sequence):
            diagnostics.append(
                f"{rec.id}: length mismatch ({len(rec.sequence)} residues, {len(rows)} coordinates); record excluded"
            )
            continue
        indices = [int(i) for i, _ in rows]
        if any(b - a != 1 for a, b in zip(indices, indices[1:])):
            diagnostics.append(f"{rec.id}: gap in residue numbering; coordinates dropped")
            records.append(ProteinRecord(rec.id, rec.sequence))
            continue
        records.append(rec.with_coords([xyz for _, xyz in rows]))
    for msg in diagnostics:
        log.warning(msg)
    return Corpus(tuple(records)), diagnostics


def read_manifest(path: str | Path) -> tuple[Corpus, list[str]]:
    """Load a corpus from ``id<TAB>seq_path<TAB>coord_path`` lines.

    Relative paths resolve against the manifest's directory. ``coord_path``
    may be empty or ``-`` for sequence-only records.
    """
    path = Path(path)
    base = path.parent
    sequences = []
    coord_sets = {}
    fasta_cache: dict[Path, dict[str, ProteinRecord]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ProteinIOError(f"{path}:{lineno}: expected id<TAB>seq_path<TAB>coord_path")
        pid, seq_path = parts[0], base / parts[1]
        if seq_path not in fasta_cache:
            fasta_cache[seq_path] = {r.id: r for r in parse_fasta(seq_path.read_text())}
        entries = fasta_cache[seq_path]
        if pid in entries:
            rec = entries[pid]
        elif len(entries) == 1:
            rec = ProteinRecord(pid, next(iter(entries.values())).sequence)
        else:
            raise ProteinIOError(f"{path}:{lineno}: id {pid} not found in {seq_path}")
        sequences.append(rec)
        if len(parts) == 3 and parts[2].strip() not in ("", "-"):
            cpath = base / parts[2].strip()
            coord_sets[pid] = parse_ca_coords(cpath.read_text(), coord_format_for(cpath))
    return bind(sequences, coord_sets)


def write_corpus(corpus: Corpus, directory: str | Path, coord_format: str = "tsv") -> Path:
    """Write a corpus as FASTA + coordinate files + manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "sequences.fasta").write_text(write_fasta(corpus))
    suffix = ".pdb" if coord_format == "pdb_atom" else ".tsv"
    lines = []
    for rec in corpus:
        coord_name = "-"
        if rec.has_coords:
            coord_name = f"{rec.id}{suffix}"
            text = write_pdb_ca(rec.ca_coords, rec.sequence) if suffix == ".pdb" else write_tsv_coords(rec.ca_coords)
            (directory / coord_name).write_text(text)
        lines.append(f"{rec.id}\tsequences.fasta\t{coord_name}")
    manifest = directory / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
