"""On-disk formats.

Matrix file (distance bias, contact probabilities)::

    4 bytes  magic  b"GLPM"
    u32      version (1)
    u64      rows
    u64      cols
    f64[]    rows*cols values, row-major
    (all little-endian)

Checkpoint: ``<stem>.json`` manifest (config, seed, tensor names/shapes and
payload offsets, SHA-256 of the payload) plus ``<stem>.bin``: magic
b"GLPC", u32 version, then every tensor as little-endian f64, in manifest
order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, ProteinModel, TrainingConfig

MATRIX_MAGIC = b"GLPM"
CHECKPOINT_MAGIC = b"GLPC"
FORMAT_VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sIQQ")
_CKPT_HEADER = struct.Struct("<4sI")


class FormatError(ValueError):
    pass


def write_matrix(path, matrix) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise FormatError("matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, FORMAT_VERSION, *m.shape))
        fh.write(m.tobytes())


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _MATRIX_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, cols = _MATRIX_HEADER.unpack_from(data)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = data[_MATRIX_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise FormatError(f"{path}: payload holds {len(body)} bytes, expected {rows * cols * 8}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def matrix_tsv(matrix, precision: int = 6) -> str:
    return "".join("\t".join(f"{v:.{precision}g}" for v in row) + "\n" for row in np.asarray(matrix))


def save_checkpoint(model: ProteinModel, stem, config: TrainingConfig | None = None, seed: int = 0,
                    extra: dict | None = None) -> tuple[Path, Path]:
    stem = Path(stem)
    manifest_path, payload_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    tensors, chunks, offset = [], [], _CKPT_HEADER.size
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.detach().cpu().numpy(), dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    payload = _CKPT_HEADER.pack(CHECKPOINT_MAGIC, FORMAT_VERSION) + b"".join(chunks)
    manifest = {
        "format": "glprotein-checkpoint",
        "version": FORMAT_VERSION,
        "dtype": "f64-le",
        "seed": seed,
        "model": model.cfg.__dict__,
        "training": config.to_dict() if config else None,
        "tensors": tensors,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    if extra:
        manifest["extra"] = extra
    payload_path.write_bytes(payload)
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path, payload_path


def load_checkpoint(stem) -> tuple[ProteinModel, dict]:
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    manifest = json.loads(stem.with_suffix(".json").read_text())
    payload = stem.with_suffix(".bin").read_bytes()
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('version')}")
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise FormatError("checkpoint payload checksum mismatch")
    magic, _ = _CKPT_HEADER.unpack_from(payload)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    model = ProteinModel(ModelConfig(**manifest["model"]), seed=manifest.get("seed", 0))
    params = dict(model.named_parameters())
    if set(params) != {t["name"] for t in manifest["tensors"]}:
        raise FormatError("checkpoint tensor names do not match the model")
    with torch.no_grad():
        for t in manifest["tensors"]:
            p = params[t["name"]]
            if list(p.shape) != t["shape"]:
                raise FormatError(f"{t['name']}: shape {t['shape']} != model {list(p.shape)}")
            arr = np.frombuffer(payload, dtype="<f8", count=t["count"], offset=t["offset"])
            p.copy_(torch.from_numpy(arr.reshape(t["shape"]).copy()))
    return model, manifest
