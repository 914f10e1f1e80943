"""Self-describing binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"FFNMTCKP"
    version    uint32   (currently 1)
    header     uint32 length + UTF-8 JSON (model config, vocabularies, metadata)
    count      uint32   number of parameter records
    record*    uint16 name length, UTF-8 name, uint8 ndim, uint32 dims...,
               then prod(dims) float64 values in C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputError
from .model import ModelConfig, check_params, param_shapes

MAGIC = b"FFNMTCKP"
VERSION = 1


def save_checkpoint(path, params: dict, config: ModelConfig, meta: dict | None = None) -> None:
    header = json.dumps({"model": config.to_dict(), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    names = list(param_shapes(config))
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        value = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict, ModelConfig, dict]:
    """Returns ``(params, model_config, meta)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise InputError(f"{path} is not a checkpoint (bad magic)")
    pos = 8
    version, hlen = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    config = ModelConfig.from_dict(header["model"])
    check_params(params, config)
    return params, config, header.get("meta", {})
