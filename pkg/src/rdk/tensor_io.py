"""Binary tensor I/O and basic reductions.

File format ("RDT1"):

    bytes 0..3    magic b"RDT1"
    bytes 4..7    rank, uint32 little-endian, must be 1, 2 or 3
    next 4*rank   dims, uint32 little-endian each, all > 0
    payload       prod(dims) float32 values, little-endian, row-major
                  (last axis fastest)

The format is identical for depth maps (H, W), feature maps (C, H, W)
and cost volumes (D, H, W); the consumer decides the semantics.
NaN/Inf are rejected on both read and write, so a decoded grid is
always finite. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import math
import os
import struct
import tempfile

import numpy as np

from .errors import KernelError, TensorFormatError

MAGIC = b"RDT1"
_HEADER = struct.Struct("<4sI")


def as_grid(values, rank=None, name="grid") -> np.ndarray:
    """Coerce array-like input to a float32 C-order grid of rank 1-3."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim not in (1, 2, 3):
        raise KernelError(f"{name} has rank {arr.ndim}, expected 1..3")
    if rank is not None and arr.ndim != rank:
        raise KernelError(f"{name} has rank {arr.ndim}, expected {rank}")
    return arr


def read_tensor(path) -> np.ndarray:
    """Decode an RDT1 file into a float32 array of rank 1-3."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TensorFormatError(TensorFormatError.TRUNCATED,
                                f"{path}: {len(raw)} bytes, header needs {_HEADER.size}")
    magic, rank = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise TensorFormatError(TensorFormatError.BAD_MAGIC,
                                f"{path}: got {magic!r}, expected {MAGIC!r}")
    if rank not in (1, 2, 3):
        raise TensorFormatError(TensorFormatError.BAD_RANK,
                                f"{path}: rank {rank} outside 1..3")
    dims_end = _HEADER.size + 4 * rank
    if len(raw) < dims_end:
        raise TensorFormatError(TensorFormatError.TRUNCATED,
                                f"{path}: header cut short at dims")
    dims = struct.unpack_from(f"<{rank}I", raw, _HEADER.size)
    if any(d == 0 for d in dims):
        raise TensorFormatError(TensorFormatError.BAD_DIMS,
                                f"{path}: zero extent in dims {dims}")
    count = math.prod(dims)
    expected = dims_end + 4 * count
    if len(raw) != expected:
        raise TensorFormatError(TensorFormatError.TRUNCATED,
                                f"{path}: {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=dims_end)
    if not np.isfinite(data).all():
        raise TensorFormatError(TensorFormatError.NON_FINITE,
                                f"{path}: payload contains NaN or Inf")
    # frombuffer views are read-only, which is what we want: grids are
    # immutable after construction.
    return data.reshape(dims)


def write_tensor(grid, path):
    """Encode a grid as an RDT1 file; read_tensor inverts this exactly."""
    arr = np.ascontiguousarray(grid, dtype=np.float32)
    if arr.ndim not in (1, 2, 3):
        raise TensorFormatError(TensorFormatError.INVALID_SHAPE,
                                f"rank {arr.ndim} outside 1..3")
    if arr.size == 0:
        raise TensorFormatError(TensorFormatError.INVALID_SHAPE,
                                f"empty shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise TensorFormatError(TensorFormatError.NON_FINITE,
                                "refusing to write NaN or Inf")
    blob = bytearray(_HEADER.pack(MAGIC, arr.ndim))
    blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
    blob += arr.astype("<f4", copy=False).tobytes()
    atomic_write_bytes(path, bytes(blob))


def atomic_write_bytes(path, data: bytes):
    """Write via a temp file in the destination directory, then rename."""
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rdk-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def elementwise_stats(grid) -> dict:
    """min/max/mean of a non-empty grid, accumulated in double precision."""
    arr = np.asarray(grid)
    if arr.size == 0:
        raise KernelError("stats of an empty grid")
    values = arr.astype(np.float64, copy=False)
    return {
        "min": float(values.min()),
        "max": float(values.max()),
        "mean": float(values.sum(dtype=np.float64) / values.size),
    }


def write_pgm(values, path):
    """8-bit binary PGM of a 2-D map, linear [0, 1] -> [0, 255]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise KernelError(f"PGM wants a 2-D map, got rank {arr.ndim}")
    levels = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + levels.tobytes())
