"""Canonical Huffman coding of non-negative integer symbol streams.

A codebook is a list of ``(symbol, code_length)`` pairs in canonical order
(sorted by length, then symbol). Code values are implied by that order, so the
codebook alone is enough to rebuild the decoder and serialization is
deterministic.
"""
from __future__ import annotations

import heapq

import numba
import numpy as np

from ..errors import DecodeError, ParameterError

MAX_CODE_LENGTH = 57  # codes live in a uint64 shift register


def code_lengths(symbols, counts) -> dict[int, int]:
    """Huffman code length per symbol from symbol frequencies.

    Ties are broken by the smallest symbol contained in each subtree, which
    keeps the result independent of dict/heap iteration details.
    """
    n = len(symbols)
    if n == 0:
        return {}
    if n == 1:
        return {int(symbols[0]): 1}
    heap = [(int(c), int(s), i) for i, (s, c) in enumerate(zip(symbols, counts))]
    heapq.heapify(heap)
    parent = [0] * (2 * n - 1)
    node = n
    while len(heap) > 1:
        c1, k1, a = heapq.heappop(heap)
        c2, k2, b = heapq.heappop(heap)
        parent[a] = parent[b] = node
        heapq.heappush(heap, (c1 + c2, min(k1, k2), node))
        node += 1
    # parents are created after their children, so one reverse sweep sets depths
    depth = [0] * (2 * n - 1)
    for i in range(2 * n - 3, -1, -1):
        depth[i] = depth[parent[i]] + 1
    return {int(s): depth[i] for i, s in enumerate(symbols)}


def canonical_codebook(lengths: dict[int, int]) -> list[tuple[int, int]]:
    return sorted(((s, n) for s, n in lengths.items()), key=lambda p: (p[1], p[0]))


def _canonical_codes(codebook):
    """Code values for a canonical codebook, plus a Kraft validity check."""
    syms = np.array([s for s, _ in codebook], dtype=np.int64)
    lens = np.array([n for _, n in codebook], dtype=np.int64)
    if len(codebook) == 0:
        return syms, lens, np.zeros(0, dtype=np.uint64)
    if np.any(lens < 1) or np.any(lens > MAX_CODE_LENGTH):
        raise DecodeError("code length out of range in codebook")
    if np.any(np.diff(lens) < 0):
        raise DecodeError("codebook is not in canonical order")
    kraft = sum(2.0 ** -int(n) for n in lens)
    if kraft > 1.0 + 1e-12:
        raise DecodeError("codebook violates the Kraft inequality")
    codes = np.zeros(len(codebook), dtype=np.uint64)
    code = 0
    prev = int(lens[0])
    for i, n in enumerate(lens):
        code <<= int(n) - prev
        prev = int(n)
        codes[i] = code
        code += 1
    return syms, lens, codes


@numba.njit(cache=True)
def _pack(idx, lens, codes, nbits):
    out = np.zeros((nbits + 7) // 8, dtype=np.uint8)
    acc = np.uint64(0)  # pending bits, right-aligned; fewer than 8 between codes
    held = 0
    k = 0
    for t in range(idx.shape[0]):
        j = idx[t]
        n = lens[j]
        c = codes[j]
        while n > 0:
            # top up to at most 64 bits, emitting whole bytes as they fill
            take = min(n, 56 - held)
            n -= take
            acc = (acc << np.uint64(take)) | ((c >> np.uint64(n)) & ((np.uint64(1) << np.uint64(take)) - np.uint64(1)))
            held += take
            while held >= 8:
                held -= 8
                out[k] = np.uint8((acc >> np.uint64(held)) & np.uint64(0xFF))
                k += 1
    if held:
        out[k] = np.uint8((acc << np.uint64(8 - held)) & np.uint64(0xFF))
    return out


@numba.njit(cache=True)
def _unpack(buf, nbits, count, first_code, first_index, n_at_len, syms, max_len):
    out = np.empty(count, dtype=np.int64)
    pos = 0
    for t in range(count):
        code = 0
        n = 0
        while True:
            if pos >= nbits:
                return out, -1  # truncated
            bit = (buf[pos >> 3] >> (7 - (pos & 7))) & 1
            pos += 1
            code = (code << 1) | bit
            n += 1
            if n > max_len:
                return out, -2  # no codeword matches
            off = code - first_code[n]
            if off >= 0 and off < n_at_len[n]:
                out[t] = syms[first_index[n] + off]
                break
    return out, pos


def huffman_encode(stream) -> tuple[list[tuple[int, int]], bytes, int]:
    """Encode an integer stream; returns (codebook, packed bitstream, bit length)."""
    stream = np.asarray(stream, dtype=np.int64).ravel()
    if stream.size and stream.min() < 0:
        raise ParameterError("symbols must be non-negative")
    if stream.size == 0:
        return [], b"", 0
    dense = stream.max() < (1 << 24)  # small alphabets: counting beats sorting
    if dense:
        counts = np.bincount(stream)
        symbols = np.flatnonzero(counts)
        counts = counts[symbols]
    else:
        symbols, inverse, counts = np.unique(stream, return_inverse=True, return_counts=True)
    codebook = canonical_codebook(code_lengths(symbols, counts))
    syms, lens, codes = _canonical_codes(codebook)
    if dense:
        lookup = np.zeros(int(syms.max()) + 1, dtype=np.int64)
        lookup[syms] = np.arange(len(syms))
        idx = lookup[stream]
    else:
        # map np.unique order (ascending symbol) onto canonical order
        idx = np.argsort(syms, kind="stable")[inverse.ravel()]
    nbits = int(lens[idx].sum())
    return codebook, _pack(idx, lens, codes, nbits).tobytes(), nbits


def huffman_decode(codebook, bitstream: bytes, nbits: int, count: int) -> np.ndarray:
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if not codebook:
        raise DecodeError("empty codebook for a non-empty stream")
    if nbits > 8 * len(bitstream):
        raise DecodeError(f"bit length {nbits} exceeds bitstream size {8 * len(bitstream)}")
    syms, lens, codes = _canonical_codes(codebook)
    max_len = int(lens[-1])
    first_code = np.zeros(max_len + 2, dtype=np.int64)
    first_index = np.zeros(max_len + 2, dtype=np.int64)
    n_at_len = np.zeros(max_len + 2, dtype=np.int64)
    for i in range(len(lens) - 1, -1, -1):
        n = lens[i]
        first_code[n] = codes[i]
        first_index[n] = i
        n_at_len[n] += 1
    buf = np.frombuffer(bitstream, dtype=np.uint8)
    out, status = _unpack(buf, nbits, count, first_code, first_index, n_at_len, syms, max_len)
    if status == -1:
        raise DecodeError("bitstream truncated before all symbols were decoded")
    if status == -2:
        raise DecodeError("bit pattern matches no codeword")
    return out
