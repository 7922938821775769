"""Error-bounded lossy compression: prediction, quantization, Huffman coding.

Every element of ``decompress(compress(t, params))`` is within ``params.eb`` of
the float32 value of the corresponding element of ``t``.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DecodeError, DomainError, FormatError, ParameterError
from ..tensor import as_tensor
from . import lorenzo
from .huffman import huffman_decode, huffman_encode

BLOB_MAGIC = b"ACZ1"
BLOB_VERSION = 1
DEFAULT_QUANT_RADIUS = 2**15
MAX_QUANT_RADIUS = 2**15
MAX_CODEBOOK = 0xFFFF  # u16 symbol count in the blob header


class Predictor(enum.IntEnum):
    PREVIOUS = 0  # 1-D Lorenzo over the row-major scan
    LORENZO_2D = 1  # left + top - top-left within each trailing (H, W) plane


@dataclass(frozen=True)
class CodecParams:
    eb: float
    quant_radius: int = DEFAULT_QUANT_RADIUS
    predictor: Predictor = Predictor.PREVIOUS

    def __post_init__(self):
        if not (np.isfinite(self.eb) and self.eb > 0):
            raise ParameterError(f"error bound must be positive and finite, got {self.eb}")
        r = self.quant_radius
        if r < 2 or r & (r - 1) or r > MAX_QUANT_RADIUS:
            raise ParameterError(f"quant_radius must be a power of two in [2, {MAX_QUANT_RADIUS}], got {r}")
        object.__setattr__(self, "predictor", Predictor(self.predictor))

    def code_range(self) -> tuple[int, int]:
        """Inclusive range of in-band quantization codes.

        At the maximum radius the full alphabet (2r codes plus escape) would
        overflow the u16 codebook count, so the most negative code is escaped.
        """
        r = self.quant_radius
        lo = -(r - 1) if 2 * r <= MAX_CODEBOOK else -(r - 2)
        return lo, r - 1


@dataclass(eq=False)
class CompressedTensor:
    shape: tuple[int, ...]
    params: CodecParams
    codebook: list[tuple[int, int]]
    bitstream: bytes
    bit_length: int
    outlier_indices: np.ndarray  # uint64, strictly increasing flat indices
    outlier_values: np.ndarray  # float32
    compressed_bytes: int = field(default=0)

    def __post_init__(self):
        if not self.compressed_bytes:
            self.compressed_bytes = len(self.to_bytes())

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def uncompressed_bytes(self) -> int:
        return 4 * self.size

    def to_bytes(self) -> bytes:
        p = self.params
        out = [
            BLOB_MAGIC,
            struct.pack("<BBB", BLOB_VERSION, int(p.predictor), len(self.shape)),
            struct.pack(f"<{len(self.shape)}Q", *self.shape),
            struct.pack("<dII", p.eb, p.quant_radius, len(self.outlier_indices)),
            struct.pack("<H", len(self.codebook)),
        ]
        out += [struct.pack("<IB", s, n) for s, n in self.codebook]
        out.append(struct.pack("<Q", self.bit_length))
        out.append(self.bitstream)
        rec = np.empty(len(self.outlier_indices), dtype=[("i", "<u8"), ("v", "<f4")])
        rec["i"] = self.outlier_indices
        rec["v"] = self.outlier_values
        out.append(rec.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CompressedTensor":
        pos = 0

        def take(fmt):
            nonlocal pos
            n = struct.calcsize(fmt)
            if pos + n > len(buf):
                raise FormatError("blob truncated", pos)
            vals = struct.unpack_from(fmt, buf, pos)
            pos += n
            return vals

        if buf[:4] != BLOB_MAGIC:
            raise FormatError(f"bad magic {buf[:4]!r}, expected {BLOB_MAGIC!r}", 0)
        pos = 4
        version, pred_id, rank = take("<BBB")
        if version != BLOB_VERSION:
            raise FormatError(f"unsupported blob version {version}", 4)
        if pred_id not in (0, 1):
            raise FormatError(f"unknown predictor id {pred_id}", 5)
        shape = take(f"<{rank}Q")
        if any(e == 0 for e in shape):
            raise FormatError("zero extent in shape", 7)
        eb, radius, n_out = take("<dII")
        try:
            params = CodecParams(eb, radius, Predictor(pred_id))
        except ParameterError as exc:
            raise FormatError(str(exc), pos - 16) from None
        (n_sym,) = take("<H")
        codebook = [take("<IB") for _ in range(n_sym)]
        (nbits,) = take("<Q")
        nbytes = (nbits + 7) // 8
        if pos + nbytes > len(buf):
            raise FormatError("bitstream truncated", pos)
        bitstream = bytes(buf[pos:pos + nbytes])
        pos += nbytes
        if pos + 12 * n_out != len(buf):
            raise FormatError(
                f"outlier section has {len(buf) - pos} bytes, expected {12 * n_out}", pos)
        rec = np.frombuffer(buf, dtype=[("i", "<u8"), ("v", "<f4")], count=n_out, offset=pos)
        size = int(np.prod(shape, dtype=np.int64))
        idx = rec["i"].astype(np.uint64)
        if n_out and (idx[-1] >= size or np.any(np.diff(idx.astype(np.int64)) <= 0)):
            raise FormatError("outlier indices out of range or not strictly increasing", pos)
        return cls(tuple(int(e) for e in shape), params, [tuple(map(int, c)) for c in codebook],
                   bitstream, int(nbits), idx, rec["v"].astype(np.float32), len(buf))


def _planes(shape):
    if len(shape) == 1:
        return (1, 1, shape[0])
    h, w = shape[-2], shape[-1]
    return (int(np.prod(shape[:-2], dtype=np.int64)), h, w)


def compress(t, params: CodecParams) -> CompressedTensor:
    try:
        data = as_tensor(t)
    except DomainError:
        raise DomainError("cannot compress non-finite data") from None
    if data.size == 0:
        raise DomainError("cannot compress an empty tensor")
    lo, hi = params.code_range()
    r = params.quant_radius
    if params.predictor == Predictor.PREVIOUS:
        symbols, _, outlier = lorenzo.scan_1d(data.ravel(), params.eb, r, lo, hi)
    else:
        symbols, _, outlier = lorenzo.scan_2d(data.reshape(_planes(data.shape)), params.eb, r, lo, hi)
    symbols = symbols.ravel()
    outlier = outlier.ravel()
    idx = np.flatnonzero(outlier).astype(np.uint64)
    codebook, bits, nbits = huffman_encode(symbols)
    return CompressedTensor(tuple(data.shape), params, codebook, bits, nbits,
                            idx, data.ravel()[outlier].astype(np.float32))


def decompress(c: CompressedTensor, zero_filter: bool = False) -> np.ndarray:
    """Reconstruct the tensor; ``zero_filter`` maps every |value| <= eb to exact 0."""
    size = c.size
    if len(c.outlier_indices) and int(c.outlier_indices[-1]) >= size:
        raise FormatError("outlier index out of range")
    symbols = huffman_decode(c.codebook, c.bitstream, c.bit_length, size)
    esc = np.flatnonzero(symbols == lorenzo.ESCAPE)
    if len(esc) != len(c.outlier_indices) or np.any(esc != c.outlier_indices.astype(np.int64)):
        raise DecodeError("escape positions in the bitstream disagree with the outlier table")
    p = c.params
    if p.predictor == Predictor.PREVIOUS:
        recon, k = lorenzo.unscan_1d(symbols, c.outlier_values, p.eb, p.quant_radius)
    else:
        recon, k = lorenzo.unscan_2d(symbols.reshape(_planes(c.shape)), c.outlier_values,
                                     p.eb, p.quant_radius)
    if k < 0:
        raise DecodeError("ran out of outlier values")
    recon = recon.reshape(c.shape)
    if zero_filter:
        recon[np.abs(recon.astype(np.float64)) <= p.eb] = 0.0
    return recon


def compression_ratio(c: CompressedTensor) -> float:
    return c.uncompressed_bytes / c.compressed_bytes


def save_blob(path, c: CompressedTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(c.to_bytes())


def load_blob(path) -> CompressedTensor:
    with open(path, "rb") as fh:
        return CompressedTensor.from_bytes(fh.read())
