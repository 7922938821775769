"""Dense tensors, the statistics the other modules need, and the TNSR file format.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order. ``as_tensor``
is the single validating constructor: it rejects NaN/Inf so everything downstream
can assume finite data.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError

TNSR_MAGIC = b"TNSR"


def as_tensor(data, dtype=np.float32) -> np.ndarray:
    """Return ``data`` as a contiguous, read-only, finite array of ``dtype``."""
    arr = np.array(data, dtype=dtype, order="C", ndmin=1)
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor contains NaN or Inf")
    arr.flags.writeable = False
    return arr


def _nonempty(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    if t.size == 0:
        raise DomainError("empty tensor")
    return t


def mean_abs(t) -> float:
    """Mean absolute value, accumulated in double precision."""
    t = _nonempty(t)
    return float(np.abs(t, dtype=np.float64).sum() / t.size)


def nonzero_ratio(t) -> float:
    """Fraction of elements that are not exactly zero."""
    t = _nonempty(t)
    return float(np.count_nonzero(t)) / t.size


def max_abs_diff(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))


# -- TNSR raw tensor files ---------------------------------------------------


def tensor_to_bytes(t) -> bytes:
    t = np.asarray(t)
    header = TNSR_MAGIC + struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)
    return header + np.ascontiguousarray(t, dtype="<f4").tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one TNSR record starting at ``offset``; returns (tensor, next offset)."""
    if buf[offset:offset + 4] != TNSR_MAGIC:
        raise FormatError(f"bad magic {buf[offset:offset + 4]!r}, expected {TNSR_MAGIC!r}", offset)
    pos = offset + 4
    if len(buf) < pos + 1:
        raise FormatError("truncated header", pos)
    (rank,) = struct.unpack_from("<B", buf, pos)
    pos += 1
    if len(buf) < pos + 8 * rank:
        raise FormatError("truncated extents", pos)
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    nbytes = 4 * count
    if len(buf) < pos + nbytes:
        raise FormatError(f"payload truncated: need {nbytes} bytes, have {len(buf) - pos}", pos)
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float32)
    try:
        t = as_tensor(data.reshape(shape))
    except DomainError as exc:
        raise FormatError(str(exc), pos) from None
    return t, pos + nbytes


def save_tensor(path, t) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    t, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor", end)
    return t
