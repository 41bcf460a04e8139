"""Binary checkpoint archive.

Byte layout (all integers little-endian)::

    magic      8 bytes   b"SACACKPT"
    version    uint32    1
    meta_len   uint32    length of the metadata record in bytes
    meta       meta_len  UTF-8 JSON object, keys sorted; always carries
                         "config_hash" and "step"
    count      uint32    number of arrays
    then, per array, in the order they were written:
      name_len uint16
      name     name_len  UTF-8
      ndim     uint8
      dims     ndim x uint32
      data     prod(dims) x float32 (little-endian, C order)

Values are stored as float32, so a float32 model round-trips bit-exactly.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SACACKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Mapping) -> None:
    if "config_hash" not in meta or "step" not in meta:
        raise CheckpointError("metadata needs 'config_hash' and 'step'")
    meta_bytes = json.dumps(dict(meta), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``; arrays are float32."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8
    version, meta_len = struct.unpack_from("<II", buf, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos += 8
    meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
        pos += 4 * size
        arrays[name] = arr
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return arrays, meta
