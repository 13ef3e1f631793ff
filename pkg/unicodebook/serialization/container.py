"""
Little-endian segment container shared by checkpoints and dataset files.

Layout: 8-byte magic, u32 version, u32 header length, UTF-8 JSON header,
u32 segment count, then per segment: u16 name length, name, u8 dtype code,
u8 ndim, ndim × u32 dims, u64 payload length, payload, 8-byte checksum
(truncated SHA-256 of the payload).
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from unicodebook.domain.errors import (
    ChecksumMismatchError,
    CheckpointError,
    ConfigDigestMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)

CHECKPOINT_MAGIC = b"UCBK\x00CKP"
DATASET_MAGIC = b"UCBK\x00DAT"
FORMAT_VERSION = 1

_DTYPES: dict[int, np.dtype] = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_CODES = {"f": 0, "i": 1, "u": 1, "b": 2}


class ContainerHeader(BaseModel):
    kind: str
    config_digest: str
    seed: int
    meta: dict[str, Any] = Field(default_factory=dict)


def _checksum(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()[:8]


def _normalize(array: np.ndarray) -> tuple[int, np.ndarray]:
    array = np.asarray(array)
    if array.dtype == np.uint8:
        return 2, array
    code = _CODES.get(array.dtype.kind)
    if code is None:
        raise CheckpointError(f"Unsupported segment dtype {array.dtype}")
    if code == 2:
        return 2, array.astype(np.uint8)
    return code, array.astype(_DTYPES[code])


def encode_container(magic: bytes, header: ContainerHeader, segments: dict[str, np.ndarray]) -> bytes:
    """Serialize named arrays in insertion order."""
    head = json.dumps(header.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(head)), head, struct.pack("<I", len(segments))]
    for name, array in segments.items():
        code, data = _normalize(array)
        name_bytes = name.encode("utf-8")
        payload = np.ascontiguousarray(data).tobytes()
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BB", code, data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
        parts.append(_checksum(payload))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"File ends inside {what}: needed {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(
    data: bytes, magic: bytes, expected_digest: str | None = None
) -> tuple[ContainerHeader, dict[str, np.ndarray]]:
    reader = _Reader(data)
    found = reader.take(len(magic), "magic")
    if found != magic:
        raise CheckpointError(f"Bad magic {found!r}, expected {magic!r}")
    version, head_len = reader.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"Container version {version} is not supported (expected {FORMAT_VERSION})")
    try:
        header = ContainerHeader.model_validate_json(reader.take(head_len, "header"))
    except ValidationError as exc:
        raise CheckpointError(f"Malformed container header: {exc}") from exc
    if expected_digest is not None and header.config_digest != expected_digest:
        raise ConfigDigestMismatchError(expected_digest, header.config_digest)

    (count,) = reader.unpack("<I", "segment count")
    segments: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = reader.unpack("<H", f"segment {i} name length")
        name = reader.take(name_len, f"segment {i} name").decode("utf-8")
        code, ndim = reader.unpack("<BB", f"segment '{name}' type")
        if code not in _DTYPES:
            raise CheckpointError(f"Segment '{name}' has unknown dtype code {code}")
        dims = reader.unpack(f"<{ndim}I", f"segment '{name}' shape")
        (length,) = reader.unpack("<Q", f"segment '{name}' length")
        payload = reader.take(length, f"segment '{name}' payload")
        stored = reader.take(8, f"segment '{name}' checksum")
        if stored != _checksum(payload):
            raise ChecksumMismatchError(name)
        dtype = _DTYPES[code]
        if length != int(np.prod(dims, dtype=np.int64)) * dtype.itemsize:
            raise CheckpointError(f"Segment '{name}' payload length {length} does not match shape {dims}")
        segments[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after the last segment")
    return header, segments
