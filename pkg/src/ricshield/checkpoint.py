"""NNCK checkpoint container: named float64 arrays plus a text config record.

Layout (all integers little-endian):
  "NNCK" | u16 version | u32 meta_len | meta (UTF-8 key=value lines)
  | u32 entry_count | entries
entry: u16 name_len | name UTF-8 | u32 rank | u32 dims[rank] | float64 payload

The meta block is the leading config record that makes model checkpoints
self-describing; bare parameter dumps leave it empty.
"""

from __future__ import annotations

import struct

import numpy as np

NNCK_MAGIC = b"NNCK"
NNCK_VERSION = 1


def _encode_meta(meta: dict[str, str]) -> bytes:
    return "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")


def _decode_meta(blob: bytes) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        if line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


def to_bytes(params: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> bytes:
    meta_blob = _encode_meta(meta or {})
    chunks = [NNCK_MAGIC, struct.pack("<HI", NNCK_VERSION, len(meta_blob)), meta_blob,
              struct.pack("<I", len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def from_bytes(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if blob[:4] != NNCK_MAGIC:
        raise ValueError("not an NNCK checkpoint (bad magic)")
    version, meta_len = struct.unpack("<HI", blob[4:10])
    if version != NNCK_VERSION:
        raise ValueError(f"unsupported NNCK version {version}")
    pos = 10
    meta = _decode_meta(blob[pos:pos + meta_len])
    pos += meta_len
    (count,) = struct.unpack("<I", blob[pos:pos + 4])
    pos += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", blob[pos:pos + 2])
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack("<I", blob[pos:pos + 4])
        pos += 4
        dims = struct.unpack(f"<{rank}I", blob[pos:pos + 4 * rank])
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(blob, dtype="<f8", count=size,
                                     offset=pos).reshape(dims).copy()
        pos += size * 8
    if pos != len(blob):
        raise ValueError("trailing bytes after last checkpoint entry")
    return params, meta


def save(path, params: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(params, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
