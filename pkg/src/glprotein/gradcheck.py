"""Central finite-difference check of the analytic gradients of the joint loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import ModelConfig, ProteinModel, TrainingConfig, backward, mask_sequence
from .protein_io import STANDARD_RESIDUES, tokenize
from .synthetic import random_coil
from .training import batch_losses
from .encodings import pairwise_distances

TOY_MODEL = ModelConfig(d_model=8, heads=2, n_encoder=1, n_decoder=1, mol_dim=4, num_kernels=4, max_len=16, mlp_ratio=2)


@dataclass
class BlockReport:
    name: str
    size: int
    max_abs_error: float
    max_rel_error: float
    grad_scale: float


def toy_problem(seed: int = 0, length: int = 12, cfg: ModelConfig = TOY_MODEL):
    """A small model, one masked structured sequence and one triplet."""
    rng = np.random.default_rng(seed)
    model = ProteinModel(cfg, seed=seed)
    # perturb parameters away from their symmetric initial values (gamma=1, beta=0, zero biases)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    seqs = ["".join(rng.choice(list(STANDARD_RESIDUES), size=length)) for _ in range(3)]
    tokens = tokenize(seqs[0])
    batch = mask_sequence(tokens, rng)
    dist = torch.from_numpy(pairwise_distances(random_coil(length, rng)))
    trip = tuple(torch.tensor(tokenize(s)) for s in seqs)
    return model, [(batch, dist)], [trip]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_gradients(seed: int = 0, step: float = 1e-5, alpha: float = 1.0, epsilon: float = 1.0,
                    length: int = 12) -> list[BlockReport]:
    model, masked, triplets = toy_problem(seed, length)
    cfg = TrainingConfig(alpha=alpha, epsilon=epsilon, model=model.cfg)

    def loss_value():
        with torch.no_grad():
            return batch_losses(model, masked, triplets, cfg)[2].item()

    grads = backward(batch_losses(model, masked, triplets, cfg)[2], model)
    reports = []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        analytic = grads[name].numpy().ravel()
        numeric = np.zeros_like(analytic)
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * step)
        rel = relative_error(analytic, numeric)
        reports.append(BlockReport(name, analytic.size, float(np.max(np.abs(analytic - numeric))),
                                   float(rel.max()), float(np.max(np.abs(analytic)))))
    return reports
