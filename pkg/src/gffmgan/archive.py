"""Portable tensor archive: checkpoints and external embedding weights.

Layout (all integers little-endian)::

    magic      8 bytes  b"GFFMTNSR"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON (sorted keys)
    count      u32
    count x    name_len u16, name, dtype_len u8, dtype ("<f4" ...), ndim u8,
               shape (ndim x u64), nbytes u64, raw little-endian bytes
    sha256     32 bytes over everything above

Writing the same tensors and metadata always produces the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"GFFMTNSR"
FORMAT_VERSION = 1
_DIGEST = 32


def encode(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        dtype = le.dtype.str.encode("ascii")
        raw = np.ascontiguousarray(le).tobytes()
        key = name.encode("utf-8")
        parts += [
            struct.pack("<H", len(key)),
            key,
            struct.pack("<B", len(dtype)),
            dtype,
            struct.pack("<B", arr.ndim),
            struct.pack(f"<{arr.ndim}Q", *arr.shape),
            struct.pack("<Q", len(raw)),
            raw,
        ]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("archive ends unexpectedly")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(buf) < len(MAGIC) + 4 + _DIGEST or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a tensor archive (bad magic or too short)")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: archive is truncated or corrupt")
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported archive version {version} (this build reads {FORMAT_VERSION})")
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (klen,) = r.unpack("<H")
        name = r.take(klen).decode("utf-8")
        (dlen,) = r.unpack("<B")
        dtype = np.dtype(r.take(dlen).decode("ascii"))
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        arr = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape)
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    return tensors, meta


def write_archive(path, tensors: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    data = encode(tensors, meta)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def read_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"archive {path} does not exist")
    return decode(path.read_bytes())
