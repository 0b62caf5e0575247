"""Binary parameter checkpoint: named float64 tensors plus a config echo.

Byte layout (all integers little-endian, documented in docs/formats.md):

    8   magic  b"MTPLCKP1"
    4   u32    format version (1)
    4   u32    length L of the canonical config JSON
    L   bytes  config JSON, UTF-8, sorted keys
    32  bytes  SHA-256 of the config JSON bytes (fingerprint)
    4   u32    tensor count
    per tensor:
        2      u16   name length K
        K      bytes name, UTF-8
        1      u8    ndim
        4*nd   u32   dims
        8*n    f64   row-major data, little-endian
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import IntegrityError

MAGIC = b"MTPLCKP1"
VERSION = 1


def config_fingerprint(config: dict) -> str:
    return hashlib.sha256(canonical_config_bytes(config)).hexdigest()


def canonical_config_bytes(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict) -> None:
    cfg_bytes = canonical_config_bytes(config)
    digest = hashlib.sha256(cfg_bytes).digest()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(digest)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, str]:
    """Returns (tensors, config dict, hex fingerprint); validates integrity."""
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise IntegrityError("checkpoint truncated")
        chunk = data[off:off + n]
        off += n
        return chunk

    if take(8) != MAGIC:
        raise IntegrityError("bad checkpoint magic")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    cfg_bytes = take(cfg_len)
    digest = take(32)
    if hashlib.sha256(cfg_bytes).digest() != digest:
        raise IntegrityError("config fingerprint mismatch")
    config = json.loads(cfg_bytes.decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(take(8 * n), dtype="<f8").reshape(dims).copy()
        if name in tensors:
            raise IntegrityError(f"duplicate tensor {name!r} in checkpoint")
        tensors[name] = arr
    if off != len(data):
        raise IntegrityError("trailing bytes after last tensor")
    return tensors, config, digest.hex()
