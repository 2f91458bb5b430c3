"""Flat binary tensor container with a plain-text sidecar manifest.

File layout: 4-byte magic, uint32 format version, uint32 record count,
then one record per tensor: uint32 name length, utf-8 name, uint32 rank,
uint32 extents, raw little-endian float32 data. The manifest (written next
to the container as `<path>.manifest`) lists `name dim0xdim1x...` per line
so checkpoints can be inspected without this library.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"CTXF"
VERSION = 1


def save_arrays(path, named: dict[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(named))]
    manifest_lines = []
    for name, arr in named.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", arr32.ndim))
        chunks.append(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
        chunks.append(arr32.tobytes())
        manifest_lines.append(f"{name} {'x'.join(str(e) for e in arr32.shape)}")
    path.write_bytes(b"".join(chunks))
    Path(str(path) + ".manifest").write_text("\n".join(manifest_lines) + "\n")


def load_arrays(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        out[name] = arr.copy()
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes after last record")
    return out
