"""Binary tensor container: magic ``K2V1``, then one record per array.

Record layout, all integers little-endian uint32:

    name_len | name (UTF-8) | rank | dim_0 .. dim_{rank-1} | payload

with the payload stored as little-endian float64 in row-major order.
Records are written in sorted-name order so identical contents produce
identical bytes.  Some artifacts prepend a JSON header to the container
in the same file; see ``write_with_header`` / ``read_with_header``.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import CheckpointFormatError

MAGIC = b"K2V1"


def dump_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr).reshape(arr.shape)
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.astype("<f8").tobytes())
    return buf.getvalue()


def parse_arrays(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    out: dict[str, np.ndarray] = {}
    offset = 4
    total = len(blob)

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > total:
            raise CheckpointFormatError("truncated checkpoint payload")
        piece = blob[offset:offset + n]
        offset += n
        return piece

    while offset < total:
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(count * 8), dtype="<f8").reshape(shape)
        if name in out:
            raise CheckpointFormatError(f"duplicate array name {name!r}")
        out[name] = np.array(data, dtype=np.float64)
    return out


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dump_arrays(arrays))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return parse_arrays(Path(path).read_bytes())


def write_with_header(path: str | Path, header: dict, arrays: Mapping[str, np.ndarray]) -> None:
    """Single-file artifact: uint32 header length, JSON header, K2V1 payload."""
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(encoded)))
        f.write(encoded)
        f.write(dump_arrays(arrays))


def read_with_header(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise CheckpointFormatError("file too short for a header")
    (header_len,) = struct.unpack("<I", blob[:4])
    if len(blob) < 4 + header_len:
        raise CheckpointFormatError("truncated JSON header")
    try:
        header = json.loads(blob[4:4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable JSON header: {exc}") from exc
    return header, parse_arrays(blob[4 + header_len:])
