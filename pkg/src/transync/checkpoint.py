"""Versioned binary checkpoints.

Layout, all integers little-endian:

    magic  b"TSYN"
    u32    format version (currently 1)
    u32    hyperparameter blob length, then that many bytes of JSON
    u32    tensor count
    per tensor:
        u16  name length, then utf-8 name bytes
        u8   rank
        u32  dim sizes, rank of them
        f64  payload, row-major little-endian

Tensor payloads are always written as 64-bit floats, whatever the
in-memory dtype, so checkpoints are exchangeable between precisions.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping, Union

import numpy as np

from .segmentation import RESERVED, Vocab
from .tensor import Tensor, get_default_dtype

__all__ = [
    "MAGIC",
    "VERSION",
    "load_checkpoint",
    "load_model",
    "save_checkpoint",
    "save_model",
]

MAGIC = b"TSYN"
VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, Union[Tensor, np.ndarray]],
                    hyperparams: Mapping) -> None:
    blob = json.dumps(dict(hyperparams), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            name_bytes = name.encode("utf-8")
            if len(name_bytes) > 0xFFFF:
                raise ValueError(f"tensor name too long: {name[:40]}...")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise ValueError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise ValueError(f"not a TSYN checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        hyper = json.loads(_read_exact(fh, blob_len, "hyperparameters"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            dims = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "dim"))[0]
                for _ in range(rank))
            size = int(np.prod(dims, dtype=np.int64)) if dims else 1
            payload = _read_exact(fh, 8 * size, f"tensor {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        trailing = fh.read(1)
        if trailing:
            raise ValueError("trailing bytes after the last tensor")
    return hyper, tensors


def save_model(path, model, extra: Mapping = ()) -> None:
    """Write a Seq2SeqModel with enough metadata to rebuild it."""
    enc = model.encoder
    vocab_tokens = [model.vocab.token_of(i)
                    for i in range(len(RESERVED), len(model.vocab))]
    hyper = {
        "d": enc.d,
        "heads": enc.layers[0].local.head_count,
        "enc_layers": enc.n_layers,
        "dec_layers": len(model.decoder.layers),
        "with_sync": enc.layers[0].sync is not None,
        "sync_heads": (enc.layers[0].sync.head_count
                       if enc.layers[0].sync is not None else 1),
        "sync_layers": (list(enc.sync_layers)
                        if enc.sync_layers is not None else None),
        "sync_residual": enc.sync_residual,
        "max_len": int(enc.positions.shape[0]),
        "vocab_tokens": vocab_tokens,
    }
    hyper.update(dict(extra))
    save_checkpoint(path, model.tensors(), hyper)


def load_model(path):
    """Rebuild a Seq2SeqModel from `save_model` output."""
    from .decoder import Seq2SeqModel

    hyper, tensors = load_checkpoint(path)
    vocab = Vocab(hyper["vocab_tokens"])
    model = Seq2SeqModel.init(
        vocab,
        d=hyper["d"],
        heads=hyper["heads"],
        enc_layers=hyper["enc_layers"],
        dec_layers=hyper["dec_layers"],
        rng=np.random.default_rng(0),
        with_sync=hyper["with_sync"],
        max_len=hyper["max_len"],
        sync_heads=hyper["sync_heads"],
        sync_layers=hyper["sync_layers"],
        sync_residual=hyper["sync_residual"],
    )
    expected = model.tensors()
    missing = sorted(set(expected) - set(tensors))
    surplus = sorted(set(tensors) - set(expected))
    if missing or surplus:
        raise ValueError(
            f"checkpoint does not match the architecture; "
            f"missing={missing[:4]} surplus={surplus[:4]}")
    dtype = get_default_dtype()
    for name, param in expected.items():
        arr = tensors[name]
        if arr.shape != param.shape:
            raise ValueError(
                f"tensor {name!r} has shape {arr.shape}, expected {param.shape}")
        param.data = arr.astype(dtype, copy=True)
    return model, hyper
