"""Single-file checkpoint container.

Layout::

    b"SPRCKPT\\0"               8-byte magic
    header length            little-endian uint64
    header                   UTF-8 JSON: format_version, config, vocab_hash,
                             meta, tensors[{name, dtype, shape, offset, nbytes}],
                             payload_sha256
    payload                  concatenated little-endian tensor bytes
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

from specretro.model.config import ModelConfig
from specretro.model.network import Seq2SeqTransformer, init_model

MAGIC = b"SPRCKPT\x00"
FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class VocabularyMismatchError(CheckpointError):
    pass


def save(model: Seq2SeqTransformer, path: str | Path, vocab_hash: str, meta: dict[str, Any] | None = None) -> str:
    """Write ``model`` to ``path``; returns the sha256 of the written file."""
    entries = []
    chunks = []
    offset = 0
    for name, tensor in model.state_dict().items():
        dtype = str(tensor.dtype).removeprefix("torch.")
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for {name}")
        data = tensor.detach().cpu().numpy().astype(_DTYPES[dtype], copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab_hash": vocab_hash,
        "meta": dict(meta if meta is not None else model.meta),
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = MAGIC + struct.pack("<Q", len(head)) + head + payload
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_header(path: str | Path) -> tuple[dict[str, Any], bytes]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    (head_len,) = struct.unpack("<Q", blob[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if len(blob) < start + head_len:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CorruptCheckpointError(f"{path}: unreadable header") from err
    return header, blob[start + head_len :]


def load(path: str | Path, vocab_hash: str | None = None) -> Seq2SeqTransformer:
    """Load a checkpoint; if ``vocab_hash`` is given it must match the stored one."""
    header, payload = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {header.get('format_version')} != {FORMAT_VERSION}")
    expected = sum(t["nbytes"] for t in header["tensors"])
    if len(payload) != expected:
        raise CorruptCheckpointError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CorruptCheckpointError(f"{path}: payload checksum mismatch")
    if vocab_hash is not None and header["vocab_hash"] != vocab_hash:
        raise VocabularyMismatchError(f"{path}: checkpoint was trained with a different vocabulary")

    config = ModelConfig.from_dict(header["config"])
    model = init_model(config)
    state = {}
    for t in header["tensors"]:
        raw = payload[t["offset"] : t["offset"] + t["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[t["dtype"]]).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.meta = dict(header.get("meta", {}))
    model.meta["vocab_hash"] = header["vocab_hash"]
    model.eval()
    return model
