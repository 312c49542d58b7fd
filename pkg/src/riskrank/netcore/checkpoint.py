"""Checkpoint container.

Layout: 8-byte magic, little-endian u64 header length, JSON header, then each
tensor as little-endian float64 in header order. The header records the
format version, config, seed and a ``(name, shape, offset)`` table.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .state import ModelConfig, ModelState, parameter_shapes

MAGIC = b"RRCKPT\x00\x01"
FORMAT_VERSION = 1


def to_bytes(state: ModelState, extra: dict | None = None) -> bytes:
    table = []
    offset = 0
    for name, arr in state.params.items():
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "config": state.config.to_dict(),
        "seed": state.config.seed,
        "tensors": table,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in state.params.values())
    return MAGIC + len(blob).to_bytes(8, "little") + blob + body


def from_bytes(raw: bytes) -> tuple[ModelState, dict]:
    if raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    size = int.from_bytes(raw[8:16], "little")
    try:
        header = json.loads(raw[16 : 16 + size])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    cfg = ModelConfig.from_dict(header["config"])
    expected = parameter_shapes(cfg)
    body = memoryview(raw)[16 + size :]
    params = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise CheckpointError(f"tensor {name} has shape {shape}, config implies {expected.get(name)}")
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start + 8 * count > len(body):
            raise CheckpointError(f"tensor {name} is truncated")
        params[name] = np.frombuffer(body[start : start + 8 * count], dtype="<f8").astype(np.float64).reshape(shape)
    if set(params) != set(expected):
        raise CheckpointError("checkpoint does not hold every parameter")
    return ModelState(cfg, params), header.get("extra", {})


def save_checkpoint(path, state: ModelState, extra: dict | None = None):
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(state, extra))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelState, dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(raw)
