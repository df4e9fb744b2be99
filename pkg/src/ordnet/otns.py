"""OTNS1 binary tensor files and parameter checkpoints.

Layout: ``b"OTNS1"``, u8 dtype code, u8 rank, ``rank`` little-endian u64
extents, then the row-major little-endian payload. Dtype code 0 is float64;
code 1 (int64) carries integer label maps.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ordnet.errors import FormatError

MAGIC = b"OTNS1"
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
MANIFEST = "manifest.txt"


def encode(array) -> bytes:
    arr = np.asarray(array)
    if np.issubdtype(arr.dtype, np.integer):
        code = 1
    elif np.issubdtype(arr.dtype, np.floating):
        code = 0
    else:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    arr = np.asarray(arr, dtype=DTYPES[code], order="C")
    if arr.ndim > 255:
        raise FormatError("rank above 255 cannot be encoded")
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:5] != MAGIC:
        raise FormatError("missing OTNS1 magic")
    code, rank = struct.unpack_from("<BB", buf, 5)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    off = 7 + 8 * rank
    if len(buf) < off:
        raise FormatError("truncated OTNS1 header")
    shape = struct.unpack_from(f"<{rank}Q", buf, 7)
    dtype = DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if len(buf) - off != n * dtype.itemsize:
        raise FormatError(f"payload is {len(buf) - off} bytes, expected {n * dtype.itemsize} for shape {shape}")
    return np.frombuffer(buf, dtype=dtype, count=n, offset=off).reshape(shape).copy()


def save(path, array) -> None:
    Path(path).write_bytes(encode(array))


def load(path) -> np.ndarray:
    try:
        return decode(Path(path).read_bytes())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def save_checkpoint(directory, params: Mapping[str, np.ndarray]) -> None:
    """Write each array as ``<name>.otns`` plus a ``name filename`` manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, arr in params.items():
        fname = name.replace(os.sep, "_") + ".otns"
        save(d / fname, arr)
        lines.append(f"{name} {fname}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")


def load_checkpoint(directory) -> dict:
    d = Path(directory)
    try:
        text = (d / MANIFEST).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint manifest in {d}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{d / MANIFEST}:{lineno}: expected 'name filename'")
        out[parts[0]] = load(d / parts[1])
    return out
