import math
from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from glprotein import contacts
from glprotein.contacts import (
    BUCKETS, ContactGroundTruth, PairwiseHead, ProbeConfig, contact_truth, evaluate, precision_at, probe_contacts,
    train_probe,
)
from glprotein.model import ModelConfig, ProteinModel
from glprotein.protein_io import ProteinRecord
from glprotein.synthetic import hairpin, probe_corpus, straight_chain

from oracles import precision_exhaustive


def test_straight_chain_has_no_contacts():
    rec = ProteinRecord("s", "G" * 30, straight_chain(30))
    assert contact_truth(rec).contacts == frozenset()


def test_hairpin_contacts_match_distance_check():
    xyz = hairpin(30, 14)
    truth = contact_truth(ProteinRecord("h", "G" * 30, xyz))
    expected = {(i, j) for i in range(30) for j in range(i + 6, 30) if math.dist(xyz[i], xyz[j]) < 8.0}
    assert truth.contacts == expected and expected
    # every contact pairs the two arms across the turn
    assert all(i <= 14 < j for i, j in truth.contacts)


def test_zero_threshold_empty():
    rec = ProteinRecord("h", "G" * 20, hairpin(20, 9))
    assert contact_truth(rec, threshold=0.0).contacts == frozenset()


def test_perfect_predictor():
    rec = ProteinRecord("h", "G" * 60, hairpin(60, 29))
    truth = contact_truth(rec)
    pred = truth.as_matrix().astype(float)
    assert precision_at(pred, truth, "long", Fraction(1, 5)) == 1.0


def test_ten_residues_five_correct():
    pairs = [(i, j) for i in range(10) for j in range(i + 6, 10)]
    assert len(pairs) == 10
    truth = ContactGroundTruth(frozenset(pairs[:5]), 10)
    assert precision_at(np.zeros((10, 10)), truth, "short", 1) == 0.5


def test_undefined_bucket():
    truth = ContactGroundTruth(frozenset(), 20)
    m = evaluate(np.zeros((20, 20)), truth)
    assert m[("long", "L")] is None and m[("short", "L")] == 0.0
    assert "long\tL\tundefined" in m.to_tsv()


def test_average_skips_undefined():
    a = contacts.ProbeMetrics({("long", "L"): None, ("short", "L"): 0.5})
    b = contacts.ProbeMetrics({("long", "L"): 1.0, ("short", "L"): 0.0})
    avg = contacts.average_metrics([a, b])
    assert avg[("long", "L")] == 1.0 and avg[("short", "L")] == 0.25 and avg[("medium", "L")] is None


@settings(max_examples=100)
@given(st.integers(12, 24), st.integers(0, 2**32 - 1), st.sampled_from(list(BUCKETS)),
       st.sampled_from([Fraction(1), Fraction(1, 2), Fraction(1, 5)]), st.booleans())
def test_precision_matches_exhaustive(length, seed, bucket, frac, coarse):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, 3, size=(length, length)) / 2 if coarse else rng.random((length, length))
    truth = ContactGroundTruth(frozenset((i, j) for i in range(length) for j in range(i + 6, length)
                                         if rng.random() < 0.3), length)
    lo, hi = BUCKETS[bucket]
    assert precision_at(pred, truth, bucket, frac) == precision_exhaustive(pred, truth.contacts, length, lo, hi, frac)


def test_zero_head_gives_half():
    head = PairwiseHead(8, zero=True)
    probs = probe_contacts(torch.randn(7, 8, dtype=torch.float64), head)
    np.testing.assert_array_equal(probs, np.full((7, 7), 0.5))


@given(st.integers(0, 1000), st.integers(2, 20))
def test_head_logits_symmetric(seed, length):
    head = PairwiseHead(8, seed=seed)
    e = torch.randn(length, 8, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    with torch.no_grad():
        logits = head(e)
    assert torch.equal(logits, logits.T)


def test_head_gradient_finite_differences():
    head = PairwiseHead(3, hidden=4, seed=1)
    e = torch.randn(4, 3, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    target = torch.tensor(np.random.default_rng(0).random((4, 4)))

    def value():
        return torch.nn.functional.binary_cross_entropy_with_logits(head(e), target)

    grads = torch.autograd.grad(value(), list(head.parameters()))
    h = 1e-6
    for p, g in zip(head.parameters(), grads):
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = value().item()
            flat[i] = orig - h
            down = value().item()
            flat[i] = orig
            num = (up - down) / (2 * h)
            assert abs(num - g.view(-1)[i].item()) <= 1e-6 * max(1.0, abs(num))


def test_probe_training_fits_training_set():
    corpus = list(probe_corpus(4, np.random.default_rng(0), 30, 34))
    model = ProteinModel(ModelConfig(d_model=16, heads=2, n_encoder=1, n_decoder=1, mol_dim=4, num_kernels=4,
                                     max_len=64), seed=0)
    _, losses = train_probe(model, corpus, ProbeConfig(epochs=40, seed=0))
    assert losses[-1] < losses[0]


def test_finetune_updates_backbone():
    corpus = list(probe_corpus(2, np.random.default_rng(1), 20, 22))
    model = ProteinModel(ModelConfig(d_model=8, heads=2, n_encoder=1, n_decoder=1, mol_dim=4, num_kernels=4,
                                     max_len=32), seed=0)
    before = model.distance.w2.detach().clone()
    train_probe(model, corpus, ProbeConfig(epochs=2, finetune=True))
    assert not torch.equal(before, model.distance.w2)
