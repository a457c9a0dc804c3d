"""Binary checkpoint format with lossless float64 round-trip.

Layout (all integers little-endian):

    magic   b"CMETA\\x00"
    version uint32
    config  uint64 length + UTF-8 canonical config text
    count   uint32 number of entries
    entry*  uint16 name length + name bytes,
            uint8 ndim + int64 dims,
            float64 payload (little-endian)
    crc32   uint32 over every preceding byte

Loading verifies magic, version and checksum before touching any payload;
shape mismatches against the configured model surface as dimension errors.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .exceptions import (CheckpointCorruptionError, CheckpointFormatError,
                         CheckpointVersionError)

MAGIC = b"CMETA\x00"
VERSION = 1


def save_checkpoint(path, arrays, config_text=""):
    """Write name->array entries plus the config record; returns the path."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = config_text.encode()
    blob += struct.pack("<Q", len(cfg)) + cfg
    blob += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        if arr.ndim:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        nb = name.encode()
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}q", *arr.shape) if arr.ndim else b""
        blob += arr.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))
    return path


def load_checkpoint(path):
    """Return (config_text, name->array) after full integrity checks."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or not blob.startswith(MAGIC):
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    body, tail = blob[:-4], blob[-4:]
    (stored,) = struct.unpack("<I", tail)
    if zlib.crc32(body) != stored:
        raise CheckpointCorruptionError(f"{path}: checksum mismatch (truncated or corrupted)")
    off = len(MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, body, off)
        off += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} unsupported (expected {VERSION})")
    (cfg_len,) = take("<Q")
    config_text = body[off:off + cfg_len].decode()
    off += cfg_len
    (count,) = take("<I")
    arrays = {}
    try:
        for _ in range(count):
            (name_len,) = take("<H")
            name = body[off:off + name_len].decode()
            off += name_len
            (ndim,) = take("<B")
            shape = take(f"<{ndim}q") if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape)
            off += n * 8
            arrays[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: malformed entry table ({exc})") from exc
    return config_text, arrays
