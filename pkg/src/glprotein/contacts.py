"""Contact-map probe and top-L precision metrics.

A pair (i, j), i < j, is a contact when its CA-CA distance is below the
threshold (8 A by default) and j - i >= 6. Precision is bucketed by
sequence separation: short 6-11, medium 12-23, long >= 24.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encodings import pairwise_distances
from .model import DTYPE, ProteinModel
from .protein_io import ProteinRecord

MIN_SEPARATION = 6
BUCKETS = {"short": (6, 12), "medium": (12, 24), "long": (24, None)}
FRACTIONS = {"L": Fraction(1), "L/2": Fraction(1, 2), "L/5": Fraction(1, 5)}


@dataclass(frozen=True)
class ContactGroundTruth:
    contacts: frozenset
    length: int

    def __post_init__(self):
        for i, j in self.contacts:
            if not 0 <= i < j < self.length:
                raise ValueError(f"contact {(i, j)} out of range for length {self.length}")

    def as_matrix(self) -> np.ndarray:
        m = np.zeros((self.length, self.length), dtype=bool)
        for i, j in self.contacts:
            m[i, j] = m[j, i] = True
        return m


def contact_truth(record: ProteinRecord, threshold: float = 8.0,
                  min_separation: int = MIN_SEPARATION) -> ContactGroundTruth:
    if not record.has_coords:
        raise ValueError(f"{record.id}: no coordinates")
    dist = pairwise_distances(record.ca_coords)
    ii, jj = np.nonzero(np.triu(dist < threshold, k=min_separation))
    return ContactGroundTruth(frozenset(zip(ii.tolist(), jj.tolist())), len(record))


def _bucket_pairs(length: int, bucket: str):
    lo, hi = BUCKETS[bucket]
    hi = length if hi is None else hi
    return [(i, j) for i in range(length) for j in range(i + lo, min(length, i + hi))]


def precision_at(pred, truth: ContactGroundTruth, bucket: str, fraction=1) -> float | None:
    """Precision of the top ceil(fraction * L) pairs of one separation bucket.

    Predictions are symmetrized first. Ties are broken by (i, j). Returns
    None when the bucket has no candidate pairs.
    """
    pred = np.asarray(pred, dtype=np.float64)
    length = truth.length
    if pred.shape != (length, length):
        raise ValueError(f"prediction shape {pred.shape} does not match length {length}")
    pairs = _bucket_pairs(length, bucket)
    if not pairs:
        return None
    frac = Fraction(fraction).limit_denominator(1000)
    k = min(math.ceil(frac * length), len(pairs))
    sym = 0.5 * (pred + pred.T)
    ranked = sorted(pairs, key=lambda p: (-sym[p], p))
    hits = sum(1 for p in ranked[:k] if p in truth.contacts)
    return hits / k


@dataclass
class ProbeMetrics:
    values: dict = field(default_factory=dict)  # (bucket, fraction name) -> float | None

    def __getitem__(self, key):
        return self.values[key]

    def rows(self):
        for bucket in BUCKETS:
            for name in FRACTIONS:
                yield bucket, name, self.values.get((bucket, name))

    def to_tsv(self) -> str:
        lines = ["bucket\tfraction\tprecision"]
        for bucket, name, v in self.rows():
            lines.append(f"{bucket}\t{name}\t{'undefined' if v is None else f'{v:.6f}'}")
        return "\n".join(lines) + "\n"


def evaluate(pred, truth: ContactGroundTruth) -> ProbeMetrics:
    return ProbeMetrics({(b, n): precision_at(pred, truth, b, f) for b in BUCKETS for n, f in FRACTIONS.items()})


def average_metrics(metrics: Iterable[ProbeMetrics]) -> ProbeMetrics:
    """Per-key mean over the defined values; a key defined nowhere stays None."""
    metrics = list(metrics)
    out = {}
    for b in BUCKETS:
        for n in FRACTIONS:
            vals = [m.values.get((b, n)) for m in metrics]
            vals = [v for v in vals if v is not None]
            out[(b, n)] = float(np.mean(vals)) if vals else None
    return ProbeMetrics(out)


# --------------------------------------------------------------------------
# pairwise head


class PairwiseHead(nn.Module):
    """Two-layer MLP over [e_i, e_j, e_i * e_j], averaged over both orders so logits are symmetric."""

    def __init__(self, d_model: int, hidden: int = 32, seed: int = 0, zero: bool = False):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.fc1 = nn.Linear(3 * d_model, hidden, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden, 1, dtype=DTYPE)
        with torch.no_grad():
            if zero:
                for p in self.parameters():
                    p.zero_()
            else:
                self.fc1.weight.copy_(torch.randn(hidden, 3 * d_model, generator=gen, dtype=DTYPE) / math.sqrt(3 * d_model))
                self.fc1.bias.zero_()
                self.fc2.weight.copy_(torch.randn(1, hidden, generator=gen, dtype=DTYPE) / math.sqrt(hidden))
                self.fc2.bias.zero_()

    def _score(self, ei, ej):
        feats = torch.cat([ei, ej, ei * ej], dim=-1)
        return self.fc2(F.gelu(self.fc1(feats), approximate="tanh")).squeeze(-1)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        n = e.shape[0]
        ei = e[:, None, :].expand(n, n, -1)
        ej = e[None, :, :].expand(n, n, -1)
        fwd = self._score(ei, ej)
        return 0.5 * (fwd + fwd.T)


def pairwise_head(e_p, head: PairwiseHead) -> torch.Tensor:
    return head(torch.as_tensor(e_p, dtype=DTYPE))


def probe_contacts(e_p, head: PairwiseHead) -> np.ndarray:
    with torch.no_grad():
        return torch.sigmoid(pairwise_head(e_p, head)).numpy()


@dataclass(frozen=True)
class ProbeConfig:
    hidden: int = 32
    lr: float = 1e-2
    epochs: int = 60
    seed: int = 0
    finetune: bool = False
    threshold: float = 8.0
    backbone_lr: float = 1e-3


def _pair_mask(length: int) -> torch.Tensor:
    idx = torch.arange(length)
    return (idx[None, :] - idx[:, None]) >= MIN_SEPARATION


def representations(model: ProteinModel, record: ProteinRecord) -> torch.Tensor:
    dist = torch.from_numpy(pairwise_distances(record.ca_coords)) if record.has_coords else None
    return model.represent(torch.tensor(record.tokens), dist)


def train_probe(model: ProteinModel, records: Sequence[ProteinRecord], cfg: ProbeConfig = ProbeConfig()):
    """Fit a pairwise head with binary cross-entropy on pairs with separation >= 6.

    With ``finetune=False`` the backbone is frozen and its representations are
    computed once; otherwise the backbone is updated too, at ``backbone_lr``.
    """
    head = PairwiseHead(model.cfg.d_model, cfg.hidden, seed=cfg.seed)
    groups = [{"params": list(head.parameters()), "lr": cfg.lr}]
    if cfg.finetune:
        groups.append({"params": [p for p in model.parameters() if p.requires_grad], "lr": cfg.backbone_lr})
    opt = torch.optim.Adam(groups)
    targets = [torch.from_numpy(contact_truth(r, cfg.threshold).as_matrix()).to(DTYPE) for r in records]
    masks = [_pair_mask(len(r)) for r in records]
    cached = None
    if not cfg.finetune:
        with torch.no_grad():
            cached = [representations(model, r) for r in records]
    losses = []
    for _ in range(cfg.epochs):
        terms = []
        for k, rec in enumerate(records):
            e = cached[k] if cached is not None else representations(model, rec)
            logits = head(e)
            terms.append(F.binary_cross_entropy_with_logits(logits[masks[k]], targets[k][masks[k]]))
        loss = torch.stack(terms).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return head, losses


@torch.no_grad()
def evaluate_probe(model: ProteinModel, head: PairwiseHead, records: Sequence[ProteinRecord],
                   threshold: float = 8.0) -> ProbeMetrics:
    return average_metrics(
        evaluate(probe_contacts(representations(model, r), head), contact_truth(r, threshold)) for r in records
    )
