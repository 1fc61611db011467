"""Sequence-dependent TM-score: Needleman-Wunsch pairing, Kabsch superposition,
and an iterative search for the superposition that maximizes the score."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .protein_io import ProteinRecord


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


class Scoring(NamedTuple):
    match: float = 2.0
    mismatch: float = -1.0
    gap: float = -2.0


@dataclass(frozen=True)
class AlignmentPairing:
    pairs: tuple[tuple[int, int], ...]
    score: float = 0.0

    def __post_init__(self):
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
            if not (i1 > i0 and j1 > j0):
                raise AlignmentError(f"pairing not strictly increasing at {(i0, j0)} -> {(i1, j1)}")
        if pairs and min(min(p) for p in pairs) < 0:
            raise AlignmentError("negative index in pairing")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.pairs:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        arr = np.asarray(self.pairs, dtype=int)
        return arr[:, 0], arr[:, 1]


@dataclass(frozen=True)
class TmScoreResult:
    score: float
    transform: RigidTransform
    pairing: AlignmentPairing
    l_native: int
    d0: float

    @property
    def l_aligned(self) -> int:
        return len(self.pairing)


# --------------------------------------------------------------------------
# superposition


def kabsch(points_a, points_b, weights=None) -> tuple[RigidTransform, float]:
    """Least-squares rigid transform mapping ``points_b`` onto ``points_a``.

    Returns the transform and the (weighted) RMSD after superposition. The
    rotation is always proper; a reflection in the SVD solution is undone by
    flipping the sign of the smallest singular direction.
    """
    a = np.asarray(points_a, dtype=np.float64)
    b = np.asarray(points_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise AlignmentError(f"point sets must both be (N, 3); got {a.shape} and {b.shape}")
    n = a.shape[0]
    if n < 3:
        raise AlignmentError(f"kabsch needs at least 3 points, got {n}")
    w = None
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
            raise AlignmentError("weights must be non-negative, one per point, with positive sum")
        w = w / w.sum()

    return _superpose(a, b, w)


def _superpose(a, b, w=None):
    if w is None:
        ca, cb = a.mean(0), b.mean(0)
        a0, b0 = a - ca, b - cb
        var_a, var_b = (a0 * a0).sum() / len(a), (b0 * b0).sum() / len(b)
        h = b0.T @ a0
    else:
        ca, cb = w @ a, w @ b
        a0, b0 = a - ca, b - cb
        var_a, var_b = w @ (a0 * a0).sum(1), w @ (b0 * b0).sum(1)
        h = (b0 * w[:, None]).T @ a0
    if var_a < 1e-12 or var_b < 1e-12:
        raise AlignmentError("degenerate point set (zero variance)")
    u, _, vt = np.linalg.svd(h)
    rot = vt.T @ u.T
    if np.linalg.det(rot) < 0:
        vt[2] *= -1.0
        rot = vt.T @ u.T
    trans = ca - rot @ cb
    diff = b @ rot.T + trans - a
    sq = (diff * diff).sum(1)
    rmsd = float(np.sqrt(sq.mean() if w is None else w @ sq))
    return RigidTransform(rot, trans), rmsd


# --------------------------------------------------------------------------
# sequence pairing


def needleman_wunsch(seq_a: str, seq_b: str, scoring: Scoring = Scoring()) -> AlignmentPairing:
    """Global alignment with a linear gap penalty.

    Traceback prefers a diagonal step, then a gap inserted into ``seq_a``
    (consuming a residue of ``seq_b``), then a gap inserted into ``seq_b``.
    """
    if not seq_a or not seq_b:
        raise AlignmentError("both sequences must be non-empty")
    n, m = len(seq_a), len(seq_b)
    match, mismatch, gap = scoring
    h = np.zeros((n + 1, m + 1))
    h[:, 0] = gap * np.arange(n + 1)
    h[0, :] = gap * np.arange(m + 1)
    a = np.frombuffer(seq_a.encode(), dtype=np.uint8)
    b = np.frombuffer(seq_b.encode(), dtype=np.uint8)
    sub = np.where(a[:, None] == b[None, :], match, mismatch)
    for i in range(1, n + 1):
        row, prev = h[i], h[i - 1]
        for j in range(1, m + 1):
            row[j] = max(prev[j - 1] + sub[i - 1, j - 1], row[j - 1] + gap, prev[j] + gap)

    pairs = []
    i, j = n, m
    while i > 0 and j > 0:
        if h[i, j] == h[i - 1, j - 1] + sub[i - 1, j - 1]:
            pairs.append((i - 1, j - 1))
            i, j = i - 1, j - 1
        elif h[i, j] == h[i, j - 1] + gap:
            j -= 1
        else:
            i -= 1
    pairs.reverse()
    return AlignmentPairing(tuple(pairs), float(h[n, m]))


def pairing_score(pairs, len_a: int, len_b: int, seq_a: str, seq_b: str, scoring: Scoring = Scoring()) -> float:
    """Score of the global alignment implied by ``pairs`` (unpaired residues are gaps)."""
    match, mismatch, gap = scoring
    total = 0.0
    for i, j in pairs:
        total += match if seq_a[i] == seq_b[j] else mismatch
    total += gap * ((len_a - len(pairs)) + (len_b - len(pairs)))
    return total


# --------------------------------------------------------------------------
# TM-score


def d_zero(l_native: int) -> float:
    if l_native < 1:
        raise AlignmentError("l_native must be >= 1")
    return max(0.5, 1.24 * float(np.cbrt(l_native - 15)) - 1.8)


def _tm_terms(pa, pb, transform, d0):
    d = np.linalg.norm(transform.apply(pb) - pa, axis=1)
    return d, 1.0 / (1.0 + (d / d0) ** 2)


def score_transform(coords_a, coords_b, pairing: AlignmentPairing, transform: RigidTransform,
                    d0: float | None = None) -> float:
    """TM-score of one fixed superposition (no search)."""
    coords_a = np.asarray(coords_a, dtype=np.float64)
    l_native = coords_a.shape[0]
    d0 = d_zero(l_native) if d0 is None else d0
    ia, ib = pairing.as_arrays()
    _, terms = _tm_terms(coords_a[ia], np.asarray(coords_b, dtype=np.float64)[ib], transform, d0)
    return float(terms.sum() / l_native)


def _windows(n: int):
    lengths = []
    for w in (n, n // 2, n // 4):
        if (w >= 4 or w == n) and w not in lengths:
            lengths.append(w)
    for w in lengths:
        step = max(1, w // 4)
        starts = list(range(0, n - w + 1, step))
        if starts[-1] != n - w:
            starts.append(n - w)
        for s in starts:
            yield s, w


def _cutoffs(d0: float) -> list[float]:
    if d0 >= 8.0:
        return [d0]
    return [d0 + (8.0 - d0) * f for f in (1.0, 0.5, 0.25, 0.0)]


def tm_score_coords(coords_a, coords_b, pairing: AlignmentPairing, max_iter: int = 20) -> TmScoreResult:
    coords_a = np.asarray(coords_a, dtype=np.float64)
    coords_b = np.asarray(coords_b, dtype=np.float64)
    l_native = coords_a.shape[0]
    if len(pairing) < 3:
        raise AlignmentError(f"pairing has {len(pairing)} residue pairs; at least 3 needed")
    ia, ib = pairing.as_arrays()
    pa, pb = coords_a[ia], coords_b[ib]
    n = len(ia)
    d0 = d_zero(l_native)

    best_score, best_t = -1.0, None

    def consider(t):
        nonlocal best_score, best_t
        d, terms = _tm_terms(pa, pb, t, d0)
        s = terms.sum() / l_native
        if s > best_score:
            best_score, best_t = s, t
        return d

    # refinement is deterministic given (stage, subset): a seed that reaches a
    # visited state would retrace an explored trajectory
    visited = set()
    for start, width in _windows(n):
        try:
            t, _ = _superpose(pa[start:start + width], pb[start:start + width])
        except AlignmentError:
            continue
        d = consider(t)
        for stage, cutoff in enumerate(_cutoffs(d0)):
            subset = None
            for _ in range(max_iter):
                sel = d < cutoff
                if sel.sum() < 3:
                    sel = np.zeros(n, dtype=bool)
                    sel[np.argsort(d, kind="stable")[:3]] = True
                if subset is not None and np.array_equal(sel, subset):
                    break
                key = (stage, sel.tobytes())
                if key in visited:
                    break
                visited.add(key)
                subset = sel
                try:
                    t, _ = _superpose(pa[sel], pb[sel])
                except AlignmentError:
                    break
                d = consider(t)
            else:
                continue
            if subset is None or not np.array_equal(sel, subset):
                break  # hit a visited state; abandon this seed

    if best_t is None:
        raise AlignmentError("no non-degenerate superposition found")
    return TmScoreResult(float(best_score), best_t, pairing, l_native, d0)


def tm_score(struct_a: ProteinRecord, struct_b: ProteinRecord, scoring: Scoring = Scoring(),
             pairing: AlignmentPairing | None = None) -> TmScoreResult:
    """TM-score of ``struct_b`` against ``struct_a``, normalized by ``len(struct_a)``.

    The score is asymmetric; average both directions for a symmetric value.
    """
    for rec in (struct_a, struct_b):
        if rec.ca_coords is None:
            raise AlignmentError(f"{rec.id}: no coordinates")
    if pairing is None:
        pairing = needleman_wunsch(struct_a.sequence, struct_b.sequence, scoring)
    return tm_score_coords(struct_a.ca_coords, struct_b.ca_coords, pairing)
