import numpy as np
import pytest
import torch

from glprotein.model import ModelConfig, NonFiniteError, ProteinModel, TrainingConfig
from glprotein.protein_io import Corpus
from glprotein.synthetic import random_structure
from glprotein.training import (
    Example, Pretrainer, batch_losses, block_means, make_optimizer, masked_accuracy, train_step, write_trace,
)
from glprotein.triplet_miner import MinerConfig, build_index

SMALL = ModelConfig(d_model=8, heads=2, n_encoder=1, n_decoder=1, mol_dim=4, num_kernels=4, max_len=32, mlp_ratio=2)


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(0)
    corpus = Corpus(tuple(random_structure(f"p{i}", int(rng.integers(10, 20)), rng) for i in range(5)))
    index, _ = build_index(corpus, MinerConfig(k_positives=2, n_candidates=4, neg_threshold=0.4))
    assert index
    return corpus, index


def _cfg(**kw):
    return TrainingConfig(model=SMALL, steps=5, batch_size=2, **kw)


def test_same_seed_same_trace(toy):
    corpus, index = toy
    runs = [Pretrainer(corpus, index, _cfg(seed=4)).run() for _ in range(2)]
    assert runs[0] == runs[1]


def test_different_seed_different_trace(toy):
    corpus, index = toy
    assert Pretrainer(corpus, index, _cfg(seed=1)).run() != Pretrainer(corpus, index, _cfg(seed=2)).run()


def test_alpha_zero_reports_but_ignores_triplet(toy):
    corpus, index = toy
    trainer = Pretrainer(corpus, index, _cfg(alpha=0.0, epsilon=50.0))
    before = trainer.model.encoder.tok_emb.detach().clone()
    trace = trainer.run()
    assert all(r.total == r.mlm for r in trace)
    assert any(r.ptl > 0 for r in trace)
    assert not torch.equal(before, trainer.model.encoder.tok_emb)


def test_total_is_mlm_plus_alpha_ptl(toy):
    corpus, index = toy
    for r in Pretrainer(corpus, index, _cfg(alpha=0.5)).run():
        assert r.total == pytest.approx(r.mlm + 0.5 * r.ptl, abs=1e-12)


def test_non_finite_step_leaves_parameters(toy):
    corpus, index = toy
    cfg = _cfg()
    model = ProteinModel(SMALL)
    with torch.no_grad():
        model.lm_head.bias[3] = float("nan")
    snapshot = {n: p.detach().clone() for n, p in model.named_parameters()}
    trainer = Pretrainer(corpus, index, cfg, model=model)
    with pytest.raises(NonFiniteError, match="loss_mlm"):
        trainer.step()
    for n, p in model.named_parameters():
        torch.testing.assert_close(p, snapshot[n], equal_nan=True, atol=0, rtol=0)


def test_adam_variant_learns(toy):
    corpus, index = toy
    trace = Pretrainer(corpus, index, TrainingConfig(model=SMALL, steps=60, batch_size=5, optimizer="adam",
                                                     lr=1e-2)).run()
    assert np.mean([r.mlm for r in trace[-10:]]) < np.mean([r.mlm for r in trace[:10]])


def test_trace_file(tmp_path, toy):
    corpus, index = toy
    trace = Pretrainer(corpus, index, _cfg()).run(3)
    write_trace(trace, tmp_path / "t.tsv")
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert lines[0] == "step\tloss_mlm\tloss_ptl\tloss_total" and len(lines) == 4
    assert float(lines[1].split("\t")[3]) == trace[0].total


def test_block_means():
    assert block_means(list(range(10)), 5) == [2.0, 7.0]
    assert block_means([1.0] * 7, 5) == [1.0]


def test_masked_accuracy_range(toy):
    corpus, _ = toy
    acc = masked_accuracy(ProteinModel(SMALL), corpus, repeats=2)
    assert 0.0 <= acc <= 1.0
