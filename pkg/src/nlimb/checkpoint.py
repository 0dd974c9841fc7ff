"""Versioned binary checkpoint container.

Layout (all integers little-endian):
  magic "NLMB" | u32 version | u32 section count
  section table: per section u16 name length, utf-8 name, u64 offset, u64 length
  section payloads

Float sections are raw little-endian float64; the "meta" section is UTF-8
JSON with sorted keys so identical states serialize byte-identically.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"NLMB"
VERSION = 1


class CheckpointError(IOError):
    """Corrupt, truncated, or version-incompatible checkpoint file."""


def write_container(path: str, sections: dict[str, bytes]) -> None:
    names = list(sections)  # insertion order is part of the format
    header = bytearray()
    header += MAGIC
    header += struct.pack("<II", VERSION, len(names))
    table_size = sum(2 + len(n.encode()) + 16 for n in names)
    offset = len(header) + table_size
    table = bytearray()
    for n in names:
        enc = n.encode()
        table += struct.pack("<H", len(enc)) + enc
        table += struct.pack("<QQ", offset, len(sections[n]))
        offset += len(sections[n])
    with open(path, "wb") as fh:
        fh.write(bytes(header) + bytes(table) + b"".join(sections[n] for n in names))


def read_container(path: str) -> dict[str, bytes]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    pos = 12
    entries = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode()
            pos += name_len
            offset, length = struct.unpack_from("<QQ", blob, pos)
            pos += 16
            entries.append((name, offset, length))
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt section table") from exc
    out = {}
    for name, offset, length in entries:
        if offset + length > len(blob):
            raise CheckpointError(f"{path}: truncated (section {name!r})")
        out[name] = blob[offset : offset + length]
    return out


def pack_array(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def unpack_array(raw: bytes, shape=None) -> np.ndarray:
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return a if shape is None else a.reshape(shape)


def pack_meta(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()


def unpack_meta(raw: bytes) -> dict:
    try:
        return json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt meta section") from exc
