"""Binary container for named float32 parameter tensors.

Layout (little-endian): magic "LCNN", u32 format version, then one record
per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims, float32
payload in row-major order.  Used for network checkpoints and for the
Gaussian back-end models.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LCNN"
VERSION = 1


def save_params(path: str | Path, params: dict[str, np.ndarray]) -> None:
    """Write tensors in dict order; values are stored as float32."""
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", MAGIC, VERSION))
        for name, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into an ordered name -> float32 array dict."""
    params: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8:
            raise ValueError(f"truncated checkpoint header: {path}")
        magic, version = struct.unpack("<4sI", header)
        if magic != MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r} in {path}")
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version} in {path}")
        while True:
            raw = f.read(4)
            if not raw:
                break
            (name_len,) = struct.unpack("<I", raw)
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            payload = f.read(4 * count)
            if len(payload) != 4 * count:
                raise ValueError(f"truncated payload for {name!r} in {path}")
            params[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return params
