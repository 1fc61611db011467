"""Local structure inputs for the decoder.

* ``DistanceEncoder`` turns CA-CA distances into an L x L attention bias by
  expanding each distance over K Gaussian kernels (with a learnable affine
  map indexed by the residue-type pair) and projecting through
  ``GELU(phi @ w1) @ w2``.
* ``MolecularVocab`` gives every residue type a bag of ECFP-style
  substructure identifiers from its heavy-atom graph; a residue's molecular
  embedding is the sum of its identifiers' embeddings.
"""

from __future__ import annotations

import hashlib
import math
from functools import lru_cache

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .aminoacids import bond_graph
from .protein_io import STANDARD_RESIDUES, VOCAB

SIGMA_FLOOR = 1e-3
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class EncodingError(ValueError):
    pass


# --------------------------------------------------------------------------
# 3D distance encoding


def pairwise_distances(coords) -> np.ndarray:
    """Euclidean CA-CA distance matrix; exactly symmetric with a zero diagonal."""
    x = np.asarray(coords, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise EncodingError(f"coordinates must be (L, 3), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise EncodingError("non-finite coordinate")
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff * diff).sum(-1))


def gaussian_kernels(dist: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
                     mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Negated Gaussian densities of ``gamma*dist + beta`` at each kernel.

    ``dist``, ``gamma`` and ``beta`` broadcast together; the kernel axis is
    appended last.
    """
    s = sigma.abs().clamp(min=SIGMA_FLOOR)
    z = ((gamma * dist + beta).unsqueeze(-1) - mu) / s
    return -INV_SQRT_2PI / s * torch.exp(-0.5 * z * z)


class DistanceEncoder(nn.Module):
    def __init__(self, num_kernels: int = 16, vocab_size: int = len(VOCAB), max_dist: float = 20.0,
                 generator: torch.Generator | None = None):
        super().__init__()
        if num_kernels < 1:
            raise EncodingError("num_kernels must be >= 1")
        k = num_kernels
        self.mu = nn.Parameter(torch.linspace(0.0, max_dist, k, dtype=torch.float64))
        self.sigma = nn.Parameter(torch.full((k,), max_dist / k, dtype=torch.float64))
        self.gamma = nn.Parameter(torch.ones(vocab_size, vocab_size, dtype=torch.float64))
        self.beta = nn.Parameter(torch.zeros(vocab_size, vocab_size, dtype=torch.float64))
        self.w1 = nn.Parameter(torch.randn(k, k, generator=generator, dtype=torch.float64) / math.sqrt(k))
        self.w2 = nn.Parameter(torch.randn(k, 1, generator=generator, dtype=torch.float64) / math.sqrt(k))

    @property
    def num_kernels(self) -> int:
        return self.mu.shape[0]

    def pair_tables(self, types: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # (min, max) lookup keeps both tables symmetric in the type pair
        ti, tj = types[:, None], types[None, :]
        lo, hi = torch.minimum(ti, tj), torch.maximum(ti, tj)
        return self.gamma[lo, hi], self.beta[lo, hi]

    def kernels(self, dist: torch.Tensor, types: torch.Tensor) -> torch.Tensor:
        gamma, beta = self.pair_tables(types)
        return gaussian_kernels(dist, gamma, beta, self.mu, self.sigma)

    def forward(self, dist: torch.Tensor, types: torch.Tensor) -> torch.Tensor:
        """(L, L) distances and L type ids -> (L, L) attention bias."""
        if dist.shape != (types.shape[0], types.shape[0]):
            raise EncodingError(f"distance matrix {tuple(dist.shape)} does not match {types.shape[0]} types")
        phi = self.kernels(dist, types)
        return (F.gelu(phi @ self.w1, approximate="tanh") @ self.w2).squeeze(-1)


def gaussian_basis(dist: float, type_pair: tuple[int, int], enc: DistanceEncoder) -> np.ndarray:
    """K kernel responses for a single residue pair."""
    if not math.isfinite(dist) or dist < 0:
        raise EncodingError(f"distance must be finite and non-negative, got {dist}")
    lo, hi = sorted(type_pair)
    with torch.no_grad():
        out = gaussian_kernels(torch.tensor(float(dist), dtype=torch.float64),
                               enc.gamma[lo, hi], enc.beta[lo, hi], enc.mu, enc.sigma)
    return out.numpy()


def distance_encoding(coords, types, enc: DistanceEncoder) -> np.ndarray:
    """Attention-bias matrix for one structure, as a numpy array."""
    types = torch.as_tensor(np.asarray(types), dtype=torch.long)
    dist = torch.from_numpy(pairwise_distances(coords))
    if dist.shape[0] != types.shape[0]:
        raise EncodingError(f"{dist.shape[0]} coordinates but {types.shape[0]} residue types")
    with torch.no_grad():
        return enc(dist, types).numpy()


# --------------------------------------------------------------------------
# substructure-based molecular encoding


def _stable_hash(obj) -> int:
    return int.from_bytes(hashlib.blake2b(repr(obj).encode(), digest_size=4).digest(), "little")


UNK_IDENTIFIER = _stable_hash(("UNK",))


def atom_environments(residue: str) -> dict[str, tuple]:
    """Radius-0 and radius-1 environment labels for every heavy atom.

    Radius 0 is (element, heavy-atom degree); radius 1 adds the sorted
    radius-0 labels of the bonded neighbours. Returned as
    ``{atom: (r0_label, r1_label)}``.
    """
    adj = bond_graph(residue)
    r0 = {atom: (atom[0], len(nbrs)) for atom, nbrs in adj.items()}
    return {atom: (r0[atom], (r0[atom], tuple(sorted(r0[n] for n in adj[atom])))) for atom in adj}


@lru_cache(maxsize=None)
def substructure_ids(residue_type: str) -> tuple[int, ...]:
    """Sorted, deduplicated substructure identifiers of one residue type."""
    if residue_type not in STANDARD_RESIDUES:
        return (UNK_IDENTIFIER,)
    ids = set()
    for r0, r1 in atom_environments(residue_type).values():
        ids.add(_stable_hash((0, r0)))
        ids.add(_stable_hash((1, r1)))
    return tuple(sorted(ids))


class MolecularVocab(nn.Module):
    """Per-token substructure bags plus the identifier embedding table."""

    def __init__(self, dim: int = 16, generator: torch.Generator | None = None, trainable: bool = True):
        super().__init__()
        bags = [substructure_ids(tok if len(tok) == 1 else "?") for tok in VOCAB]
        self.identifiers = sorted(set().union(*bags))
        column = {ident: i for i, ident in enumerate(self.identifiers)}
        membership = torch.zeros(len(VOCAB), len(self.identifiers), dtype=torch.float64)
        for t, bag in enumerate(bags):
            for ident in bag:
                membership[t, column[ident]] = 1.0
        self.register_buffer("membership", membership)
        table = torch.randn(len(self.identifiers), dim, generator=generator, dtype=torch.float64) / math.sqrt(dim)
        self.table = nn.Parameter(table, requires_grad=trainable)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def identifiers_for(self, token_id: int) -> list[int]:
        return [self.identifiers[c] for c in torch.nonzero(self.membership[token_id]).flatten().tolist()]

    def embedding(self, ident: int) -> torch.Tensor:
        return self.table[self.identifiers.index(ident)]

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """(L,) token ids -> (L, d) summed substructure embeddings."""
        return self.membership[tokens] @ self.table


def molecular_encoding(tokens, vocab: MolecularVocab) -> np.ndarray:
    with torch.no_grad():
        return vocab(torch.as_tensor(np.asarray(tokens), dtype=torch.long)).numpy()
