"""Portable checkpoint files.

Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header
(format version, model config, inventory flags and digest, vocabulary,
tensor names and shapes), then every tensor as little-endian float32 in
header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..schema import LabelInventory
from .config import ModelConfig
from .params import ModelParams

MAGIC = b"SDEKCKPT"
FORMAT_VERSION = 1
_DIM_FIELDS = ("hidden_dim", "width_embedding_dim", "max_span_width", "encoder")


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "config": params.config.to_dict(),
        "inventory": {**params.inventory.to_dict(), "digest": params.inventory.digest()},
        "vocab": list(params.vocab),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for tensor in params.tensors.values():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, config: ModelConfig | None = None) -> ModelParams:
    """Read a checkpoint; with ``config`` given, architecture fields must agree."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(data) < 16:
        raise CheckpointError("unexpected end of header")
    (header_len,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + header_len:
        raise CheckpointError("unexpected end of header")
    header = json.loads(data[16:16 + header_len].decode("utf-8"))
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"format_version mismatch: file={version} supported={FORMAT_VERSION}")

    stored = ModelConfig.from_dict(header["config"])
    if config is not None:
        for name in _DIM_FIELDS:
            if getattr(stored, name) != getattr(config, name):
                raise CheckpointError(
                    f"dimension mismatch: {name} checkpoint={getattr(stored, name)} config={getattr(config, name)}"
                )
    inv_info = header["inventory"]
    inv = LabelInventory(include_method=bool(inv_info["include_method"]))
    if inv.digest() != inv_info["digest"]:
        raise CheckpointError("inventory mismatch: label-set digest differs from this toolkit")

    tensors = {}
    pos = 16 + header_len
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise CheckpointError("unexpected end of tensor data")
        tensors[entry["name"]] = np.frombuffer(data[pos:pos + nbytes], dtype="<f4").reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"trailing bytes after tensor data ({len(data) - pos})")
    try:
        return ModelParams(stored, inv, tensors, tuple(header["vocab"]))
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
