import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from glprotein.model import (
    DecoderLayer, EncoderBlock, MaskedBatch, ModelConfig, ModelError, NonFiniteError, ProteinModel, TrainingConfig,
    attention, backward, decoder_layer, mask_sequence, mlm_loss, num_masked, pool, total_loss, triplet_loss,
)
from glprotein.protein_io import MASK_ID, STANDARD_IDS, tokenize
from glprotein.encodings import pairwise_distances
from glprotein.synthetic import random_coil

SMALL = ModelConfig(d_model=8, heads=2, n_encoder=1, n_decoder=1, mol_dim=4, num_kernels=4, max_len=64, mlp_ratio=2)
T = lambda x: torch.tensor(x, dtype=torch.float64)  # noqa: E731


# --- configuration


def test_config_invariants():
    with pytest.raises(ModelError):
        ModelConfig(d_model=10, heads=4)
    with pytest.raises(ModelError):
        TrainingConfig(alpha=-1)
    with pytest.raises(ModelError):
        TrainingConfig(epsilon=0)


def test_training_config_dict_round_trip():
    cfg = TrainingConfig(alpha=0.5, lr=3e-4, model=SMALL)
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg


# --- masking


def test_ten_residues_mask_two():
    batch = mask_sequence(tokenize("ACDEFGHIKL"), np.random.default_rng(0))
    assert len(batch.mask_positions) == 2


def test_masking_deterministic():
    toks = tokenize("ACDEFGHIKLMNPQRSTVWY")
    assert mask_sequence(toks, np.random.default_rng(5)) == mask_sequence(toks, np.random.default_rng(5))


@given(st.integers(2, 512), st.integers(0, 2**32 - 1))
def test_masking_invariants(length, seed):
    rng = np.random.default_rng(seed)
    toks = [int(t) for t in rng.choice(STANDARD_IDS, size=length)]
    batch = mask_sequence(toks, rng)
    assert len(batch.mask_positions) == num_masked(length) == math.floor(0.2 * length + 0.5)
    assert len(set(batch.mask_positions)) == len(batch.mask_positions)
    masked = set(batch.mask_positions)
    for i, (x, y) in enumerate(zip(batch.input_tokens, batch.target_tokens)):
        if i not in masked:
            assert x == y
    for pos, kind in zip(batch.mask_positions, batch.corruption_kinds):
        x = batch.input_tokens[pos]
        if kind == "masked":
            assert x == MASK_ID
        elif kind == "kept":
            assert x == batch.target_tokens[pos]
        else:
            assert kind == "random" and x in STANDARD_IDS


def test_mask_rejects_single_residue():
    with pytest.raises(ModelError):
        mask_sequence([5], np.random.default_rng(0))


# --- attention blocks


def test_encoder_block_hand_computed():
    cfg = ModelConfig(d_model=2, heads=1, n_encoder=1, n_decoder=0, mol_dim=2, num_kernels=1, max_len=4, mlp_ratio=1)
    block = EncoderBlock(cfg, torch.Generator().manual_seed(0))
    wq, wk, wv, wo = [[1.0, 0.5], [-0.3, 2.0]], [[0.2, -1.0], [1.5, 0.7]], [[1.0, 0.0], [0.4, -0.6]], [[0.9, 0.1], [-0.2, 1.1]]
    with torch.no_grad():
        for lin, w in ((block.w_q, wq), (block.w_k, wk), (block.w_v, wv), (block.w_o, wo)):
            lin.weight.copy_(T(w))
        block.w_o.bias.copy_(T([0.05, -0.05]))
        block.mlp.fc2.weight.zero_()
        block.mlp.fc2.bias.zero_()
    x = [[0.3, -1.2], [2.0, 0.5]]
    out = block(T(x)).detach().numpy()

    def ln(v):
        m = sum(v) / 2
        var = sum((a - m) ** 2 for a in v) / 2
        return [(a - m) / math.sqrt(var + 1e-5) for a in v]

    def matvec(w, v):
        return [sum(w[r][c] * v[c] for c in range(2)) for r in range(2)]

    h = [ln(row) for row in x]
    q, k, v = ([matvec(w, r) for r in h] for w in (wq, wk, wv))
    for i in range(2):
        s = [sum(q[i][c] * k[j][c] for c in range(2)) / math.sqrt(2) for j in range(2)]
        z = [math.exp(a - max(s)) for a in s]
        a = [t / sum(z) for t in z]
        o = [sum(a[j] * v[j][c] for j in range(2)) for c in range(2)]
        proj = matvec(wo, o)
        expected = [x[i][c] + proj[c] + [0.05, -0.05][c] for c in range(2)]
        np.testing.assert_allclose(out[i], expected, atol=1e-12)


def test_encoder_permutation_equivariant_without_positions():
    model = ProteinModel(SMALL, seed=1)
    with torch.no_grad():
        model.encoder.pos_emb.zero_()
    toks = torch.tensor(tokenize("MKTAYIAKQR"))
    perm = torch.randperm(10, generator=torch.Generator().manual_seed(0))
    out = model.encode(toks)
    torch.testing.assert_close(model.encode(toks[perm]), out[perm], atol=1e-12, rtol=0)


def _decoder_inputs(seed=0, length=5):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(length, 8, generator=g, dtype=torch.float64),
            torch.randn(length, 4, generator=g, dtype=torch.float64),
            torch.randn(length, length, generator=g, dtype=torch.float64))


def test_decoder_zero_value_path():
    layer = DecoderLayer(SMALL, torch.Generator().manual_seed(0))
    with torch.no_grad():
        layer.w_v.weight.zero_()
    e_p, e_a, phi = _decoder_inputs()
    p = layer.norm_p(e_p)
    torch.testing.assert_close(decoder_layer(e_p, e_a, phi, layer), p + layer.mlp(p), atol=1e-12, rtol=0)


def test_decoder_uniform_attention():
    layer = DecoderLayer(SMALL, torch.Generator().manual_seed(0))
    with torch.no_grad():
        layer.w_q.weight.zero_()
    e_p, e_a, _ = _decoder_inputs()
    v = layer.w_v(layer.norm_v(e_a))
    q = layer.w_q(layer.norm_p(e_p))
    o = attention(q, layer.w_k(layer.norm_k(e_a)), v, SMALL.heads, torch.zeros(5, 5, dtype=torch.float64))
    torch.testing.assert_close(o, v.mean(0).expand(5, -1), atol=1e-12, rtol=0)


def test_decoder_large_bias_concentrates():
    layer = DecoderLayer(SMALL, torch.Generator().manual_seed(0))
    e_p, e_a, _ = _decoder_inputs()
    phi = torch.zeros(5, 5, dtype=torch.float64)
    phi[:, 3] = 1e4
    v = layer.w_v(layer.norm_v(e_a))
    o = attention(layer.w_q(layer.norm_p(e_p)), layer.w_k(layer.norm_k(e_a)), v, SMALL.heads, phi)
    torch.testing.assert_close(o, v[3].expand(5, -1), atol=1e-12, rtol=0)


def test_decoder_shape_errors():
    layer = DecoderLayer(SMALL, torch.Generator().manual_seed(0))
    e_p, e_a, phi = _decoder_inputs()
    with pytest.raises(ModelError):
        layer(e_p, e_a[:4], phi)
    with pytest.raises(ModelError):
        layer(e_p, e_a, phi[:4])


@given(st.integers(2, 40))
def test_model_shapes(length):
    model = ProteinModel(SMALL, seed=0)
    rng = np.random.default_rng(length)
    toks = torch.tensor(rng.choice(STANDARD_IDS, size=length))
    dist = torch.from_numpy(pairwise_distances(rng.normal(size=(length, 3)) * 5))
    assert model(toks, dist).shape == (length, SMALL.vocab_size)
    assert model.encode(toks).shape == (length, SMALL.d_model)
    assert model.embed(toks).shape == (SMALL.d_model,)


def test_model_rejects_bad_tokens():
    model = ProteinModel(SMALL, seed=0)
    with pytest.raises(ModelError):
        model(torch.tensor([0, 99]))
    with pytest.raises(ModelError):
        model(torch.zeros(65, dtype=torch.long))


def test_structure_inputs_see_only_corrupted_tokens(rng):
    """Changing the hidden identity of a masked residue must not change the logits."""
    model = ProteinModel(SMALL, seed=0)
    toks = tokenize("ACDEFGHIKL")
    dist = torch.from_numpy(pairwise_distances(random_coil(10, rng)))
    batch = mask_sequence(toks, np.random.default_rng(0))
    other = list(toks)
    for pos in batch.mask_positions:
        other[pos] = STANDARD_IDS[(STANDARD_IDS.index(other[pos]) + 1) % 20]
    batch2 = MaskedBatch(batch.input_tokens, tuple(other), batch.mask_positions, batch.corruption_kinds)
    l1 = model(torch.tensor(batch.input_tokens), dist)
    l2 = model(torch.tensor(batch2.input_tokens), dist)
    torch.testing.assert_close(l1, l2, atol=0, rtol=0)


# --- losses


def _batch(length, positions, targets=None):
    targets = tuple(targets or [4] * length)
    return MaskedBatch(targets, targets, tuple(positions), tuple("masked" for _ in positions))


def test_mlm_uniform_logits():
    loss = mlm_loss(torch.zeros(6, 29, dtype=torch.float64), _batch(6, [1, 4]))
    assert loss.item() == pytest.approx(math.log(29), abs=1e-12)
    assert math.log(29) == pytest.approx(3.3673, abs=1e-4)


def test_mlm_margin_limit():
    vals = []
    for margin in (1.0, 5.0, 20.0, 50.0):
        logits = torch.zeros(4, 29, dtype=torch.float64)
        logits[:, 4] = margin
        vals.append(mlm_loss(logits, _batch(4, [2])).item())
    assert vals == sorted(vals, reverse=True) and vals[-1] < 1e-18


def test_mlm_hand_cross_entropy():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 29))
    target = 17
    batch = MaskedBatch((4, 4, 1, 4), (4, 4, target, 4), (2,), ("masked",))
    expected = -logits[2, target] + math.log(sum(math.exp(v) for v in logits[2]))
    assert mlm_loss(torch.from_numpy(logits), batch).item() == pytest.approx(expected, abs=1e-12)


def test_mlm_empty_mask():
    with pytest.raises(ModelError):
        mlm_loss(torch.zeros(2, 29, dtype=torch.float64), _batch(2, []))


def test_pool():
    assert pool(T([[1.0, 2.0]])).tolist() == [1.0, 2.0]
    assert pool(T([[3.0, -1.0]] * 4)).tolist() == [3.0, -1.0]
    assert pool(T([[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]])).tolist() == [3.0, 3.0]


def test_triplet_loss_values():
    a = T([0.0, 0.0])
    assert triplet_loss(a, a, T([3.0, 0.0])).item() == 0.0
    assert triplet_loss(T([0.0]), T([1.0]), T([1.5]), 1.0).item() == pytest.approx(0.5)
    assert triplet_loss(a, a, a, 0.7).item() == pytest.approx(0.7)


def test_total_loss_values():
    assert total_loss(2.0, 0.5, 1.0) == 2.5
    assert total_loss(2.0, 0.5, 0.0) == 2.0
    assert total_loss(1.2, 0.3, 0.5) == pytest.approx(1.35)


# --- backward


def _loss(model, rng):
    toks = tokenize("ACDEFGHIKL")
    batch = mask_sequence(toks, rng)
    dist = torch.from_numpy(pairwise_distances(random_coil(10, rng)))
    return mlm_loss(model(torch.tensor(batch.input_tokens), dist), batch)


def test_backward_zero_for_unused_parameters(rng):
    model = ProteinModel(SMALL, seed=0)
    grads = backward(model.embed(torch.tensor(tokenize("ACDE"))).sum(), model)
    assert torch.count_nonzero(grads["lm_head.weight"]) == 0
    assert torch.count_nonzero(grads["distance.w2"]) == 0
    assert set(grads) == {n for n, p in model.named_parameters() if p.requires_grad}


def test_backward_linear_in_loss_scale():
    model = ProteinModel(SMALL, seed=0)
    g1 = backward(_loss(model, np.random.default_rng(3)), model)
    g2 = backward(2 * _loss(model, np.random.default_rng(3)), model)
    for name in g1:
        torch.testing.assert_close(g2[name], 2 * g1[name], atol=1e-12, rtol=1e-12)


def test_backward_non_finite_names_tensor():
    model = ProteinModel(SMALL, seed=0)
    with pytest.raises(NonFiniteError, match="loss"):
        backward(torch.tensor(float("nan"), dtype=torch.float64), model)
    with torch.no_grad():
        model.lm_head.weight[0, 0] = float("inf")
    with pytest.raises(NonFiniteError):
        backward(_loss(model, np.random.default_rng(0)), model)
