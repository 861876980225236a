"""Binary tensor fixture format (SFTF).

Layout, all little-endian:
    magic   4 bytes  "SFTF"
    version u16      (currently 1)
    rank    u16
    dims    u64 * rank
    width   u8       element width in bytes: 4 (float32) or 8 (float64)
    payload width * prod(dims) bytes, row-major floats

Readers reject unknown versions, unknown widths, and payloads whose length
does not match the header.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SFTF"
VERSION = 1
_WIDTH_TO_DTYPE = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class FixtureError(ValueError):
    """Malformed or unsupported fixture file."""


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        width = 4
    elif arr.dtype == np.float64:
        width = 8
    else:
        raise FixtureError(f"fixtures hold float32/float64 tensors, got dtype {arr.dtype}")
    dims = arr.shape if arr.ndim > 0 else (1,)
    data = np.ascontiguousarray(arr.reshape(dims), dtype=_WIDTH_TO_DTYPE[width])
    header = MAGIC + struct.pack("<HH", VERSION, len(dims))
    header += struct.pack(f"<{len(dims)}Q", *dims)
    header += struct.pack("<B", width)
    Path(path).write_bytes(header + data.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FixtureError(f"{path}: not a SFTF fixture (bad magic)")
    version, rank = struct.unpack_from("<HH", blob, 4)
    if version != VERSION:
        raise FixtureError(f"{path}: unsupported fixture version {version}")
    offset = 8
    if len(blob) < offset + 8 * rank + 1:
        raise FixtureError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}Q", blob, offset)
    offset += 8 * rank
    (width,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    if width not in _WIDTH_TO_DTYPE:
        raise FixtureError(f"{path}: unsupported element width {width}")
    count = 1
    for dim in dims:
        count *= dim
    expected = width * count
    payload = blob[offset:]
    if len(payload) != expected:
        raise FixtureError(
            f"{path}: payload length {len(payload)} != element width {width} * product(dims) {count}"
        )
    arr = np.frombuffer(payload, dtype=_WIDTH_TO_DTYPE[width]).reshape(dims)
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)
