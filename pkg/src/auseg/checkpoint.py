"""Bit-exact binary checkpoint container.

Layout: magic ``AUSEG\\x01``; u32-LE length + UTF-8 config echo; then per
parameter: u32-LE name length, name bytes, u32-LE rank, u32-LE extents,
raw little-endian float64 data; finally CRC32 (u32-LE) of all preceding
bytes. save -> load -> save round-trips byte-identically.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptionError

MAGIC = b"AUSEG\x01"
MAX_RANK = 4
MAX_NAME = 4096


def serialize(config_text: str, params: dict[str, np.ndarray]) -> bytes:
    buf = bytearray(MAGIC)
    cfg = config_text.encode("utf-8")
    buf += struct.pack("<I", len(cfg))
    buf += cfg
    for name, arr in params.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        buf += struct.pack("<I", arr.ndim)
        for extent in arr.shape:
            buf += struct.pack("<I", extent)
        buf += arr.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


def deserialize(blob: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if len(blob) < len(MAGIC) + 8:
        raise CorruptionError(f"checkpoint too short ({len(blob)} bytes)")
    stored = struct.unpack("<I", blob[-4:])[0]
    actual = zlib.crc32(blob[:-4])
    if stored != actual:
        raise CorruptionError(f"checkpoint CRC mismatch: stored {stored:#010x}, "
                              f"computed {actual:#010x}")
    if blob[:len(MAGIC)] != MAGIC:
        raise CorruptionError(f"bad checkpoint magic {blob[:len(MAGIC)]!r}")
    body = blob[:-4]
    pos = len(MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise CorruptionError(f"checkpoint truncated while reading {what} at byte {pos}")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    def take_u32(what: str) -> int:
        return struct.unpack("<I", take(4, what))[0]

    cfg_len = take_u32("config length")
    config_text = take(cfg_len, "config echo").decode("utf-8")
    params: dict[str, np.ndarray] = {}
    while pos < len(body):
        name_len = take_u32("name length")
        if name_len > MAX_NAME:
            raise CorruptionError(f"implausible parameter name length {name_len}")
        name = take(name_len, "name").decode("utf-8")
        if name in params:
            raise CorruptionError(f"duplicate parameter {name!r} in checkpoint")
        rank = take_u32("rank")
        if rank > MAX_RANK:
            raise CorruptionError(f"parameter {name!r} has unsupported rank {rank}")
        shape = tuple(take_u32("extent") for _ in range(rank))
        count = 1
        for extent in shape:
            if extent < 1:
                raise CorruptionError(f"parameter {name!r} has non-positive extent {extent}")
            count *= extent
        data = take(count * 8, f"data of {name!r}")
        params[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    return config_text, params


def save_checkpoint(path, config_text: str, params: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(serialize(config_text, params))


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CorruptionError(f"checkpoint not found: {path}")
    return deserialize(path.read_bytes())
