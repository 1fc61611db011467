"""Masked protein language model with a structure-conditioned decoder.

Forward path for one protein::

    tokens --encoder--> E_p (L x D)
    E_p, E_a (molecular, L x d), Phi (distance bias, L x L) --decoder--> H (L x D)
    H --LM head--> logits (L x vocab)

The triplet objective pools encoder outputs, so it shapes the encoder only
(plus whatever it shares with the MLM path). Everything is float64 so that
finite-difference gradient checks are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encodings import DistanceEncoder, MolecularVocab
from .protein_io import MASK_ID, STANDARD_IDS, VOCAB

DTYPE = torch.float64


class ModelError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """A loss or gradient went NaN/inf; the message names the tensor."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    heads: int = 4
    n_encoder: int = 2
    n_decoder: int = 2
    mol_dim: int = 16
    num_kernels: int = 16
    vocab_size: int = len(VOCAB)
    max_len: int = 512
    mlp_ratio: int = 4
    train_mol_table: bool = True

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ModelError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        for name in ("d_model", "heads", "n_encoder", "mol_dim", "num_kernels", "max_len", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")
        if self.n_decoder < 0:
            raise ModelError("n_decoder must be >= 0")


@dataclass(frozen=True)
class TrainingConfig:
    alpha: float = 1.0
    epsilon: float = 1.0
    lr: float = 1e-3
    steps: int = 100
    seed: int = 0
    batch_size: int = 4
    optimizer: str = "sgd"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.alpha < 0:
            raise ModelError("alpha must be >= 0")
        if self.epsilon <= 0:
            raise ModelError("epsilon must be > 0")
        if self.lr <= 0:
            raise ModelError("lr must be > 0")
        if self.steps < 0 or self.batch_size < 1:
            raise ModelError("steps must be >= 0 and batch_size >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ModelError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        d["model"] = ModelConfig(**d.get("model", {}))
        return cls(**d)


# --------------------------------------------------------------------------
# building blocks


def _linear(n_in: int, n_out: int, gen: torch.Generator, bias: bool = True) -> nn.Linear:
    lin = nn.Linear(n_in, n_out, bias=bias, dtype=DTYPE)
    with torch.no_grad():
        lin.weight.copy_(torch.randn(n_out, n_in, generator=gen, dtype=DTYPE) / math.sqrt(n_in))
        if bias:
            lin.bias.zero_()
    return lin


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int,
              bias: torch.Tensor | None = None) -> torch.Tensor:
    """Multi-head scaled dot-product attention; ``bias`` (Lq x Lk) is shared by all heads."""
    lq, d = q.shape
    dh = d // heads
    qh = q.view(lq, heads, dh).transpose(0, 1)
    kh = k.view(k.shape[0], heads, dh).transpose(0, 1)
    vh = v.view(v.shape[0], heads, dh).transpose(0, 1)
    scores = qh @ kh.transpose(1, 2) / math.sqrt(dh)
    if bias is not None:
        scores = scores + bias
    out = torch.softmax(scores, dim=-1) @ vh
    return out.transpose(0, 1).reshape(lq, d)


class MLP(nn.Module):
    def __init__(self, d: int, ratio: int, gen: torch.Generator):
        super().__init__()
        self.fc1 = _linear(d, ratio * d, gen)
        self.fc2 = _linear(ratio * d, d, gen)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x), approximate="tanh"))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, cfg: ModelConfig, gen: torch.Generator):
        super().__init__()
        d = cfg.d_model
        self.heads = cfg.heads
        self.ln1 = nn.LayerNorm(d, dtype=DTYPE)
        self.w_q = _linear(d, d, gen, bias=False)
        self.w_k = _linear(d, d, gen, bias=False)
        self.w_v = _linear(d, d, gen, bias=False)
        self.w_o = _linear(d, d, gen)
        self.ln2 = nn.LayerNorm(d, dtype=DTYPE)
        self.mlp = MLP(d, cfg.mlp_ratio, gen)

    def forward(self, x):
        h = self.ln1(x)
        x = x + self.w_o(attention(self.w_q(h), self.w_k(h), self.w_v(h), self.heads))
        return x + self.mlp(self.ln2(x))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig, gen: torch.Generator):
        super().__init__()
        d = cfg.d_model
        self.tok_emb = nn.Parameter(torch.randn(cfg.vocab_size, d, generator=gen, dtype=DTYPE))
        self.pos_emb = nn.Parameter(torch.randn(cfg.max_len, d, generator=gen, dtype=DTYPE))
        self.blocks = nn.ModuleList(EncoderBlock(cfg, gen) for _ in range(cfg.n_encoder))
        self.ln_f = nn.LayerNorm(d, dtype=DTYPE)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.ndim != 1:
            raise ModelError("encoder takes one sequence of token ids")
        if tokens.numel() > self.pos_emb.shape[0]:
            raise ModelError(f"sequence length {tokens.numel()} exceeds max_len {self.pos_emb.shape[0]}")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.tok_emb.shape[0]):
            raise ModelError("token id out of vocabulary")
        x = self.tok_emb[tokens] + self.pos_emb[: tokens.numel()]
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)


class DecoderLayer(nn.Module):
    """Residue queries attend over molecular keys/values with the distance bias added to the scores.

    ``h = Norm_p(E_p) + Attention(Norm_p(E_p) W_q, Norm_k(E_a) W_k, Norm_v(E_a) W_v, Phi)``,
    followed by a residual MLP. ``W_k``/``W_v`` map the molecular dimension d to D.
    """

    def __init__(self, cfg: ModelConfig, gen: torch.Generator):
        super().__init__()
        d, dm = cfg.d_model, cfg.mol_dim
        self.heads = cfg.heads
        self.norm_p = nn.LayerNorm(d, dtype=DTYPE)
        self.norm_k = nn.LayerNorm(dm, dtype=DTYPE)
        self.norm_v = nn.LayerNorm(dm, dtype=DTYPE)
        self.w_q = _linear(d, d, gen, bias=False)
        self.w_k = _linear(dm, d, gen, bias=False)
        self.w_v = _linear(dm, d, gen, bias=False)
        self.mlp = MLP(d, cfg.mlp_ratio, gen)

    def forward(self, e_p, e_a, phi):
        if e_p.shape[0] != e_a.shape[0] or phi.shape != (e_p.shape[0], e_a.shape[0]):
            raise ModelError(f"shape mismatch: e_p {tuple(e_p.shape)}, e_a {tuple(e_a.shape)}, phi {tuple(phi.shape)}")
        p = self.norm_p(e_p)
        o = attention(self.w_q(p), self.w_k(self.norm_k(e_a)), self.w_v(self.norm_v(e_a)), self.heads, phi)
        h = p + o
        return h + self.mlp(h)


def decoder_layer(e_p, e_a, phi, layer: DecoderLayer):
    return layer(e_p, e_a, phi)


class ProteinModel(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(seed)
        self.encoder = Encoder(cfg, gen)
        self.distance = DistanceEncoder(cfg.num_kernels, cfg.vocab_size, generator=gen)
        self.molecular = MolecularVocab(cfg.mol_dim, generator=gen, trainable=cfg.train_mol_table)
        self.decoder = nn.ModuleList(DecoderLayer(cfg, gen) for _ in range(cfg.n_decoder))
        self.ln_head = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.lm_head = _linear(cfg.d_model, cfg.vocab_size, gen)
        # ablation switches
        self.use_distance = True
        self.use_molecular = True

    def encode(self, tokens) -> torch.Tensor:
        return self.encoder(torch.as_tensor(tokens, dtype=torch.long))

    def structure_inputs(self, tokens, dist=None) -> tuple[torch.Tensor, torch.Tensor]:
        """Molecular encoding and distance bias for (possibly corrupted) input tokens."""
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        e_a = self.molecular(tokens)
        if not self.use_molecular:
            e_a = torch.zeros_like(e_a)
        if dist is None or not self.use_distance:
            phi = torch.zeros(tokens.numel(), tokens.numel(), dtype=DTYPE)
        else:
            phi = self.distance(torch.as_tensor(dist, dtype=DTYPE), tokens)
        return e_a, phi

    def represent(self, tokens, dist=None) -> torch.Tensor:
        """Final per-residue representation (decoder output), L x D."""
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        h = self.encoder(tokens)
        e_a, phi = self.structure_inputs(tokens, dist)
        for layer in self.decoder:
            h = layer(h, e_a, phi)
        return h

    def forward(self, tokens, dist=None) -> torch.Tensor:
        """MLM logits, L x vocab."""
        return self.lm_head(self.ln_head(self.represent(tokens, dist)))

    def embed(self, tokens) -> torch.Tensor:
        """Pooled encoder representation used by the triplet objective."""
        return pool(self.encode(tokens))


# --------------------------------------------------------------------------
# masking and losses


@dataclass(frozen=True)
class MaskedBatch:
    input_tokens: tuple[int, ...]
    target_tokens: tuple[int, ...]
    mask_positions: tuple[int, ...]
    corruption_kinds: tuple[str, ...]  # aligned with mask_positions

    def __post_init__(self):
        if len(self.mask_positions) != len(self.corruption_kinds):
            raise ModelError("one corruption kind per masked position")


def num_masked(length: int, rate: float = 0.2) -> int:
    return int(math.floor(rate * length + 0.5))


def mask_sequence(tokens, rng: np.random.Generator, rate: float = 0.2) -> MaskedBatch:
    """Select round(rate*L) positions; each becomes [MASK] (80%), a random residue (10%) or stays (10%)."""
    tokens = [int(t) for t in tokens]
    if len(tokens) < 2:
        raise ModelError("sequence length must be >= 2")
    m = num_masked(len(tokens), rate)
    positions = np.sort(rng.choice(len(tokens), size=m, replace=False))
    inputs = list(tokens)
    kinds = []
    for pos in positions:
        u = rng.random()
        if u < 0.8:
            inputs[pos] = MASK_ID
            kinds.append("masked")
        elif u < 0.9:
            inputs[pos] = STANDARD_IDS[rng.integers(len(STANDARD_IDS))]
            kinds.append("random")
        else:
            kinds.append("kept")
    return MaskedBatch(tuple(inputs), tuple(tokens), tuple(int(p) for p in positions), tuple(kinds))


def mlm_loss(logits: torch.Tensor, batch: MaskedBatch) -> torch.Tensor:
    """Mean cross-entropy over the masked positions only."""
    if not batch.mask_positions:
        raise ModelError("no masked positions")
    pos = torch.tensor(batch.mask_positions, dtype=torch.long)
    target = torch.tensor(batch.target_tokens, dtype=torch.long)[pos]
    return F.cross_entropy(logits[pos], target)


def pool(e_p: torch.Tensor) -> torch.Tensor:
    return e_p.mean(dim=0)


def triplet_loss(a, p, n, epsilon: float = 1.0) -> torch.Tensor:
    return torch.clamp(torch.linalg.vector_norm(a - p) - torch.linalg.vector_norm(a - n) + epsilon, min=0.0)


def total_loss(mlm, ptl, alpha: float = 1.0):
    return mlm + alpha * ptl


def backward(loss: torch.Tensor, model: nn.Module) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of ``loss`` for every trainable parameter.

    Parameters the loss does not depend on get zero gradients. Raises
    ``NonFiniteError`` naming the first non-finite loss or gradient.
    """
    if not torch.isfinite(loss):
        raise NonFiniteError(f"loss is {loss.item()}")
    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    out = {}
    for (name, p), g in zip(named, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.all(torch.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}")
        out[name] = g
    return out
