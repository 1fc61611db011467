import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from glprotein.model import ModelConfig, ProteinModel, TrainingConfig
from glprotein.protein_io import tokenize
from glprotein.serialization import FormatError, load_checkpoint, matrix_tsv, read_matrix, save_checkpoint, write_matrix

SMALL = ModelConfig(d_model=8, heads=2, n_encoder=1, n_decoder=1, mol_dim=4, num_kernels=4, max_len=32, mlp_ratio=2)


@given(arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(0, 6)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_matrix_round_trip(tmp_path_factory, m):
    path = tmp_path_factory.mktemp("m") / "x.bin"
    write_matrix(path, m)
    np.testing.assert_array_equal(read_matrix(path), m)


def test_matrix_layout(tmp_path):
    write_matrix(tmp_path / "x.bin", [[1.0, 2.0, 3.0]])
    raw = (tmp_path / "x.bin").read_bytes()
    assert raw[:4] == b"GLPM" and int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:16], "little") == 1 and int.from_bytes(raw[16:24], "little") == 3
    assert np.frombuffer(raw[24:], "<f8").tolist() == [1.0, 2.0, 3.0]


@pytest.mark.parametrize("mangle", [lambda b: b"XXXX" + b[4:], lambda b: b[:10], lambda b: b[:-8]])
def test_matrix_rejects_corruption(tmp_path, mangle):
    write_matrix(tmp_path / "x.bin", np.eye(2))
    (tmp_path / "x.bin").write_bytes(mangle((tmp_path / "x.bin").read_bytes()))
    with pytest.raises(FormatError):
        read_matrix(tmp_path / "x.bin")


def test_matrix_tsv():
    assert matrix_tsv([[1.0, 0.5]]) == "1\t0.5\n"


def test_checkpoint_round_trip(tmp_path):
    model = ProteinModel(SMALL, seed=3)
    with torch.no_grad():
        model.distance.w2.mul_(-2.5)
    cfg = TrainingConfig(model=SMALL, seed=3)
    save_checkpoint(model, tmp_path / "ck", cfg, seed=3)
    loaded, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["training"] == cfg.to_dict()
    toks = torch.tensor(tokenize("MKTAYIAK"))
    torch.testing.assert_close(loaded(toks), model(toks), atol=0, rtol=0)


def test_checkpoint_bytes_deterministic(tmp_path):
    for name in ("a", "b"):
        save_checkpoint(ProteinModel(SMALL, seed=1), tmp_path / name, seed=1)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_checkpoint_detects_tampering(tmp_path):
    save_checkpoint(ProteinModel(SMALL), tmp_path / "ck")
    raw = bytearray((tmp_path / "ck.bin").read_bytes())
    raw[100] ^= 1
    (tmp_path / "ck.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="checksum"):
        load_checkpoint(tmp_path / "ck")
