"""DFT1 binary tensor files.

Layout, all little-endian:

    bytes 0..3   magic 0x44 0x46 0x54 0x31 ("DFT1")
    byte  4      dtype code: 0 = f32, 1 = f64
    byte  5      rank (number of extents)
    next  8*rank u64 extents
    rest         raw row-major data

Readers reject wrong magic, unknown dtype codes, zero extents and truncated
payloads, reporting the byte offset of the failure.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"DFT1"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_tensor(path: str | os.PathLike, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODES_BY_DTYPE:
        raise ShapeError(f"DFT1 stores f32/f64 tensors only, got dtype {arr.dtype}")
    if arr.size == 0:
        raise ShapeError(f"DFT1 extents must all be >= 1, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([_CODES_BY_DTYPE[arr.dtype], arr.ndim]))
        for extent in arr.shape:
            fh.write(int(extent).to_bytes(8, "little"))
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    return decode(blob)


def decode(blob: bytes) -> np.ndarray:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(blob) < 6:
        raise FormatError("truncated header", offset=len(blob))
    code, rank = blob[4], blob[5]
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", offset=4)
    header_end = 6 + 8 * rank
    if len(blob) < header_end:
        raise FormatError(
            f"truncated extent table: need {header_end} bytes, have {len(blob)}",
            offset=len(blob),
        )
    shape = tuple(
        int.from_bytes(blob[6 + 8 * i : 14 + 8 * i], "little") for i in range(rank)
    )
    for i, extent in enumerate(shape):
        if extent < 1:
            raise FormatError(f"extent {i} is {extent}, must be >= 1", offset=6 + 8 * i)
    dtype = _DTYPE_CODES[code]
    count = 1
    for extent in shape:
        count *= extent
    need = header_end + count * dtype.itemsize
    if len(blob) < need:
        raise FormatError(
            f"truncated payload: need {need} bytes, have {len(blob)}", offset=len(blob)
        )
    data = np.frombuffer(blob[header_end:need], dtype=dtype).reshape(shape)
    native = np.dtype(np.float32) if code == 0 else np.dtype(np.float64)
    return np.ascontiguousarray(data.astype(native, copy=False))
