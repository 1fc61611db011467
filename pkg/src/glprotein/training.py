"""Joint pre-training: masked-token loss plus alpha times the triplet loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .encodings import pairwise_distances
from .model import (
    MaskedBatch,
    NonFiniteError,
    ProteinModel,
    TrainingConfig,
    backward,
    mask_sequence,
    mlm_loss,
    total_loss,
    triplet_loss,
)
from .protein_io import Corpus, ProteinRecord
from .triplet_miner import TripletRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossRecord:
    step: int
    mlm: float
    ptl: float
    total: float


class Example:
    """Token ids and (optional) CA distance matrix of one protein, computed once."""

    __slots__ = ("id", "tokens", "dist")

    def __init__(self, record: ProteinRecord):
        self.id = record.id
        self.tokens = torch.tensor(record.tokens, dtype=torch.long)
        self.dist = torch.from_numpy(pairwise_distances(record.ca_coords)) if record.has_coords else None


def make_optimizer(model: ProteinModel, cfg: TrainingConfig) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr)
    return torch.optim.SGD(params, lr=cfg.lr)


def batch_losses(model: ProteinModel, masked: Sequence[tuple[MaskedBatch, torch.Tensor | None]],
                 triplets: Sequence[tuple[torch.Tensor, torch.Tensor, torch.Tensor]], cfg: TrainingConfig):
    """(L_MLM, L_PTL, total) as differentiable scalars; each term is a batch mean."""
    mlm_terms = []
    for batch, dist in masked:
        if not batch.mask_positions:
            continue
        logits = model(torch.tensor(batch.input_tokens, dtype=torch.long), dist)
        mlm_terms.append(mlm_loss(logits, batch))
    zero = torch.zeros((), dtype=torch.float64)
    mlm = torch.stack(mlm_terms).mean() if mlm_terms else zero
    ptl_terms = [triplet_loss(model.embed(a), model.embed(p), model.embed(n), cfg.epsilon) for a, p, n in triplets]
    ptl = torch.stack(ptl_terms).mean() if ptl_terms else zero
    return mlm, ptl, total_loss(mlm, ptl, cfg.alpha)


def train_step(model, optimizer, masked, triplets, cfg: TrainingConfig) -> tuple[float, float, float]:
    """One gradient step; parameters are left untouched if anything is non-finite."""
    mlm, ptl, total = batch_losses(model, masked, triplets, cfg)
    for name, value in (("loss_mlm", mlm), ("loss_ptl", ptl), ("loss_total", total)):
        if not torch.isfinite(value):
            raise NonFiniteError(f"{name} is {value.item()}")
    grads = backward(total, model)
    params = dict(model.named_parameters())
    for name, g in grads.items():
        params[name].grad = g
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    return mlm.item(), ptl.item(), total.item()


class Pretrainer:
    """Round-robin batches: B masked sequences and B triplets per step."""

    def __init__(self, corpus: Corpus, index: Sequence[TripletRecord], cfg: TrainingConfig,
                 model: ProteinModel | None = None):
        self.cfg = cfg
        self.model = model or ProteinModel(cfg.model, seed=cfg.seed)
        self.optimizer = make_optimizer(self.model, cfg)
        self.examples = {r.id: Example(r) for r in corpus}
        self.order = list(self.examples)
        self.index = list(index)
        self.rng = np.random.default_rng(cfg.seed)
        self.trace: list[LossRecord] = []
        self._seq_cursor = 0
        self._trip_cursor = 0

    def _next_sequences(self):
        b = self.cfg.batch_size
        ids = [self.order[(self._seq_cursor + i) % len(self.order)] for i in range(b)]
        self._seq_cursor = (self._seq_cursor + b) % len(self.order)
        out = []
        for pid in ids:
            ex = self.examples[pid]
            out.append((mask_sequence(ex.tokens.tolist(), self.rng), ex.dist))
        return out

    def _next_triplets(self):
        if not self.index:
            return []
        b = self.cfg.batch_size
        picks = [self.index[(self._trip_cursor + i) % len(self.index)] for i in range(min(b, len(self.index)))]
        self._trip_cursor = (self._trip_cursor + b) % len(self.index)
        ex = self.examples
        return [(ex[t.anchor_id].tokens, ex[t.positive_id].tokens, ex[t.negative_id].tokens) for t in picks]

    def step(self) -> LossRecord:
        masked = self._next_sequences()
        triplets = self._next_triplets()
        mlm, ptl, total = train_step(self.model, self.optimizer, masked, triplets, self.cfg)
        rec = LossRecord(len(self.trace), mlm, ptl, total)
        self.trace.append(rec)
        return rec

    def run(self, steps: int | None = None, callback: Callable[[LossRecord], None] | None = None):
        for _ in range(self.cfg.steps if steps is None else steps):
            rec = self.step()
            if callback:
                callback(rec)
        return self.trace


def write_trace(trace: Sequence[LossRecord], path: str | Path) -> None:
    lines = ["step\tloss_mlm\tloss_ptl\tloss_total"]
    lines += [f"{r.step}\t{r.mlm!r}\t{r.ptl!r}\t{r.total!r}" for r in trace]
    Path(path).write_text("\n".join(lines) + "\n")


def block_means(values: Sequence[float], width: int = 50) -> list[float]:
    """Means over consecutive non-overlapping windows (the last partial window is dropped)."""
    n = len(values) // width
    return [float(np.mean(values[i * width:(i + 1) * width])) for i in range(n)]


@torch.no_grad()
def masked_accuracy(model: ProteinModel, corpus: Corpus, seed: int = 0, repeats: int = 10) -> float:
    """Fraction of masked positions whose argmax prediction equals the original residue."""
    rng = np.random.default_rng(seed)
    hit = total = 0
    for _ in range(repeats):
        for rec in corpus:
            ex = Example(rec)
            batch = mask_sequence(ex.tokens.tolist(), rng)
            if not batch.mask_positions:
                continue
            logits = model(torch.tensor(batch.input_tokens), ex.dist)
            pos = list(batch.mask_positions)
            pred = logits[pos].argmax(-1)
            hit += int((pred == ex.tokens[pos]).sum())
            total += len(pos)
    return hit / total if total else float("nan")


@torch.no_grad()
def pooled_embeddings(model: ProteinModel, corpus: Corpus) -> dict[str, np.ndarray]:
    return {r.id: model.embed(torch.tensor(r.tokens)).numpy() for r in corpus}
