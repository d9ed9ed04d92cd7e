"""Binary checkpoint format for named float32 tensors.

Layout (all integers little-endian uint32, tensor data little-endian float32):

    magic  b"G2N2CKPT"
    version
    tensor count
    per tensor: name length, UTF-8 name, rank, dims, raw values

Round trips are bit exact.  The format carries no metadata; callers that need
run configuration alongside weights write a ``<path>.meta.json`` sidecar.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"G2N2CKPT"
VERSION = 1


def _tensor_data(value):
    data = value.data if hasattr(value, "data") else np.asarray(value)
    return np.ascontiguousarray(data, dtype="<f4")


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named tensors (numpy arrays or Tensors) to ``path``."""
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(tensors))
    for name, value in tensors.items():
        arr = _tensor_data(value)
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(blob))
    if meta is not None:
        meta_path = path.with_name(path.name + ".meta.json")
        meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    """Read a checkpoint back as an ordered name -> float32 array mapping."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic {blob[:8]!r})")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    ofs = 16
    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, ofs)
        ofs += 4
        name = blob[ofs:ofs + name_len].decode("utf-8")
        ofs += name_len
        (rank,) = struct.unpack_from("<I", blob, ofs)
        ofs += 4
        shape = struct.unpack_from(f"<{rank}I", blob, ofs)
        ofs += 4 * rank
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=ofs).reshape(shape)
        ofs += 4 * n
        tensors[name] = arr.astype(np.float32)
    if ofs != len(blob):
        raise ValueError(f"{path}: {len(blob) - ofs} trailing bytes after tensors")
    return tensors


def load_meta(path) -> dict | None:
    """Read the optional ``<path>.meta.json`` sidecar if present."""
    path = Path(path)
    meta_path = path.with_name(path.name + ".meta.json")
    if not meta_path.exists():
        return None
    return json.loads(meta_path.read_text())
