"""Synthetic CA traces and sequences for tests, demos and the probe task.

Geometry follows textbook backbone values: 3.8 A between consecutive CA
atoms, alpha helix with 1.5 A rise and 100 degrees per residue, beta strands
3.3 A per residue with 4.8 A between paired strands.
"""

from __future__ import annotations

import numpy as np

from .protein_io import STANDARD_RESIDUES, Corpus, ProteinRecord
from .structure_align import RigidTransform

CA_STEP = 3.8

# residue propensities per fold class, used only to bias synthetic sequences
FAMILY_ALPHABETS = {
    "helix": "AELKMQRHAELK",
    "sheet": "VIYFTWCVITYF",
    "coil": "GPNSDGPNSDTK",
}


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_rigid_motion(rng: np.random.Generator, scale: float = 20.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, size=3))


def helix(length: int) -> np.ndarray:
    t = np.deg2rad(100.0) * np.arange(length)
    return np.stack([2.3 * np.cos(t), 2.3 * np.sin(t), 1.5 * np.arange(length)], axis=1)


def straight_chain(length: int, spacing: float = CA_STEP) -> np.ndarray:
    return np.stack([spacing * np.arange(length), np.zeros(length), np.zeros(length)], axis=1)


def sheet(length: int, strand_len: int = 7) -> np.ndarray:
    """Antiparallel sheet: strands of ``strand_len`` joined by tight turns."""
    pts = []
    for i in range(length):
        s, k = divmod(i, strand_len)
        x = 3.3 * (k if s % 2 == 0 else strand_len - 1 - k)
        pts.append((x, 4.8 * s, 0.9 * (-1) ** i))
    return np.array(pts, dtype=np.float64)


def hairpin(length: int, turn: int, gap: float = 5.0) -> np.ndarray:
    """Two antiparallel straight arms folded at residue ``turn``."""
    pts = []
    for i in range(length):
        if i <= turn:
            pts.append((CA_STEP * i, 0.0, 0.0))
        else:
            pts.append((CA_STEP * (2 * turn + 1 - i) - CA_STEP / 2, gap, 0.0))
    return np.array(pts, dtype=np.float64)


def random_coil(length: int, rng: np.random.Generator, min_sep: float = 4.0, max_tries: int = 200) -> np.ndarray:
    """Self-avoiding random walk with 3.8 A steps and CA-CA-CA angles of 80-150 degrees."""
    pts = [np.zeros(3), np.array([CA_STEP, 0.0, 0.0])]
    while len(pts) < length:
        prev = pts[-1] - pts[-2]
        prev /= np.linalg.norm(prev)
        for _ in range(max_tries):
            theta = np.deg2rad(rng.uniform(80.0, 150.0))
            # direction at bend angle theta from the previous bond
            ortho = rng.normal(size=3)
            ortho -= ortho @ prev * prev
            ortho /= np.linalg.norm(ortho)
            step = -np.cos(theta) * prev + np.sin(theta) * ortho
            cand = pts[-1] + CA_STEP * step
            if len(pts) < 3 or np.min(np.linalg.norm(np.array(pts[:-2]) - cand, axis=1)) >= min_sep:
                pts.append(cand)
                break
        else:
            pts.append(pts[-1] + CA_STEP * prev)
    return np.array(pts[:length])


def family_template(kind: str, length: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "helix":
        return helix(length)
    if kind == "sheet":
        return sheet(length)
    if kind == "coil":
        return random_coil(length, rng)
    raise ValueError(f"unknown fold family {kind!r}")


def random_sequence(length: int, rng: np.random.Generator, alphabet: str = STANDARD_RESIDUES) -> str:
    return "".join(rng.choice(list(alphabet), size=length))


def mutate(seq: str, rate: float, rng: np.random.Generator, alphabet: str = STANDARD_RESIDUES) -> str:
    out = list(seq)
    for i in range(len(out)):
        if rng.random() < rate:
            out[i] = alphabet[rng.integers(len(alphabet))]
    return "".join(out)


def random_structure(pid: str, length: int, rng: np.random.Generator) -> ProteinRecord:
    kind = ("helix", "sheet", "coil")[rng.integers(3)]
    coords = family_template(kind, length, rng) + rng.normal(scale=0.3, size=(length, 3))
    coords = random_rigid_motion(rng).apply(coords)
    return ProteinRecord(pid, random_sequence(length, rng, FAMILY_ALPHABETS[kind]), coords)


def family_corpus(
    n_per_family: int,
    rng: np.random.Generator,
    length: int = 40,
    mutation_rate: float = 0.25,
    noise: float = 0.4,
    trim: int = 3,
    families=("helix", "sheet", "coil"),
    biased_alphabet: bool = True,
) -> tuple[Corpus, dict[str, str]]:
    """Homologous fold families: each member is a mutated, trimmed, noised copy of a template.

    With ``biased_alphabet=False`` every family draws from the 20 standard
    residues, so families differ only through their template sequences.
    Returns the corpus and an id -> family map.
    """
    records, labels = [], {}
    for kind in families:
        alphabet = FAMILY_ALPHABETS[kind] if biased_alphabet else STANDARD_RESIDUES
        template_seq = random_sequence(length, rng, alphabet)
        template_xyz = family_template(kind, length, rng)
        for m in range(n_per_family):
            lo = int(rng.integers(0, trim + 1))
            hi = length - int(rng.integers(0, trim + 1))
            seq = mutate(template_seq[lo:hi], mutation_rate, rng, alphabet)
            xyz = template_xyz[lo:hi] + rng.normal(scale=noise, size=(hi - lo, 3))
            xyz = random_rigid_motion(rng).apply(xyz)
            pid = f"{kind}{m:02d}"
            records.append(ProteinRecord(pid, seq, xyz))
            labels[pid] = kind
    return Corpus(tuple(records)), labels


def probe_corpus(n: int, rng: np.random.Generator, min_length: int = 40, max_length: int = 56,
                 noise: float = 0.3) -> Corpus:
    """Structures with long-range contacts for the contact probe: hairpins and random coils, alternating."""
    records = []
    for k in range(n):
        length = int(rng.integers(min_length, max_length + 1))
        if k % 2 == 0:
            turn = int(rng.integers(length // 2 - 4, length // 2 + 5))
            xyz = hairpin(length, turn)
        else:
            xyz = random_coil(length, rng)
        xyz = random_rigid_motion(rng).apply(xyz + rng.normal(scale=noise, size=(length, 3)))
        records.append(ProteinRecord(f"probe{k:03d}", random_sequence(length, rng), xyz))
    return Corpus(tuple(records))
