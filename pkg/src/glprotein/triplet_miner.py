"""Mine (anchor, positive, negative) protein triplets by TM-score.

Positives are the top-k corpus members by TM-score against the anchor.
Negatives come from a random candidate pool drawn per anchor, keeping only
those scoring below ``neg_threshold``.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .protein_io import Corpus
from .structure_align import tm_score

log = logging.getLogger(__name__)


class MiningError(ValueError):
    pass


@dataclass(frozen=True)
class MinerConfig:
    k_positives: int = 4
    n_candidates: int = 32
    neg_threshold: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.k_positives < 1:
            raise MiningError("k_positives must be >= 1")
        if self.n_candidates < self.k_positives:
            raise MiningError("n_candidates must be >= k_positives")
        if not 0.0 < self.neg_threshold < 1.0:
            raise MiningError(f"neg_threshold must lie in (0, 1), got {self.neg_threshold}")
        if not 0 <= self.rng_seed < 2**64:
            raise MiningError("rng_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class TripletRecord:
    anchor_id: str
    positive_id: str
    negative_id: str
    pos_score: float
    neg_score: float

    def __post_init__(self):
        if len({self.anchor_id, self.positive_id, self.negative_id}) != 3:
            raise MiningError(f"triplet ids must be distinct: {self.anchor_id}, {self.positive_id}, {self.negative_id}")
        if self.pos_score < self.neg_score:
            raise MiningError(f"pos_score {self.pos_score} < neg_score {self.neg_score}")


class ScoreCache:
    """Memoized directional TM-scores over one corpus; safe to share between threads."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        self._scores: dict[tuple[str, str], float] = {}

    def __call__(self, a: str, b: str) -> float:
        key = (a, b)
        if key not in self._scores:
            self._scores[key] = tm_score(self.corpus[a], self.corpus[b]).score
        return self._scores[key]


def anchor_seed(seed: int, anchor_id: str) -> int:
    digest = hashlib.blake2b(anchor_id.encode(), digest_size=8).digest()
    return seed ^ int.from_bytes(digest, "little")


def _check_anchor(anchor, corpus):
    if len(corpus) < 2:
        raise MiningError("corpus must hold at least 2 proteins")
    if anchor not in corpus:
        raise MiningError(f"anchor {anchor} not in corpus")
    if not corpus[anchor].has_coords:
        raise MiningError(f"anchor {anchor} has no coordinates")


def _others(anchor, corpus):
    return [r.id for r in corpus if r.id != anchor and r.has_coords]


def mine_positives(anchor: str, corpus: Corpus, cfg: MinerConfig, scores=None) -> list[tuple[str, float]]:
    _check_anchor(anchor, corpus)
    scores = scores or ScoreCache(corpus)
    ranked = sorted(((pid, scores(anchor, pid)) for pid in _others(anchor, corpus)),
                    key=lambda item: (-item[1], item[0]))
    return ranked[:cfg.k_positives]


def mine_negatives(anchor: str, corpus: Corpus, cfg: MinerConfig, scores=None) -> tuple[list[tuple[str, float]], str | None]:
    """Returns (negatives, shortage diagnostic or None)."""
    _check_anchor(anchor, corpus)
    scores = scores or ScoreCache(corpus)
    pool = _others(anchor, corpus)
    rng = np.random.default_rng(anchor_seed(cfg.rng_seed, anchor))
    take = min(cfg.n_candidates, len(pool))
    picks = rng.choice(len(pool), size=take, replace=False)
    kept = []
    for idx in picks:
        pid = pool[idx]
        s = scores(anchor, pid)
        if s < cfg.neg_threshold:
            kept.append((pid, s))
            if len(kept) == cfg.k_positives:
                break
    shortage = None
    if len(kept) < cfg.k_positives:
        shortage = (f"{anchor}: only {len(kept)} of {cfg.k_positives} negatives below "
                    f"TM-score {cfg.neg_threshold} among {take} candidates")
        log.warning(shortage)
    return kept, shortage


def _mine_anchor(anchor, corpus, cfg, scores):
    positives = mine_positives(anchor, corpus, cfg, scores)
    negatives, shortage = mine_negatives(anchor, corpus, cfg, scores)
    out = []
    for pid, ps in positives:
        for nid, ns in negatives:
            if pid == nid or ps < ns:
                continue
            out.append(TripletRecord(anchor, pid, nid, ps, ns))
    return out, shortage


def build_index(corpus: Corpus, cfg: MinerConfig, threads: int = 1) -> tuple[list[TripletRecord], list[str]]:
    """Triplets for every structured anchor, in corpus order, plus shortage diagnostics."""
    anchors = [r.id for r in corpus if r.has_coords]
    scores = ScoreCache(corpus)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _mine_anchor(a, corpus, cfg, scores), anchors))
    else:
        results = [_mine_anchor(a, corpus, cfg, scores) for a in anchors]
    index, diagnostics = [], []
    for triplets, shortage in results:
        index.extend(triplets)
        if shortage:
            diagnostics.append(shortage)
    return index, diagnostics


def format_index(index) -> str:
    return "".join(
        f"{t.anchor_id}\t{t.positive_id}\t{t.negative_id}\t{t.pos_score!r}\t{t.neg_score!r}\n"
        for t in index
    )


def save_index(index, path: str | Path) -> None:
    Path(path).write_text(format_index(index))


def load_index(path: str | Path, corpus: Corpus | None = None) -> list[TripletRecord]:
    index = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise MiningError(f"{path}:{lineno}: expected 5 tab-separated fields")
        a, p, n = parts[:3]
        try:
            rec = TripletRecord(a, p, n, float(parts[3]), float(parts[4]))
        except MiningError as exc:
            raise MiningError(f"{path}:{lineno}: {exc}") from None
        except ValueError:
            raise MiningError(f"{path}:{lineno}: non-numeric score") from None
        if corpus is not None:
            missing = [pid for pid in (a, p, n) if pid not in corpus]
            if missing:
                raise MiningError(f"{path}:{lineno}: id(s) not in corpus: {', '.join(missing)}")
        index.append(rec)
    return index
