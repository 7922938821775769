import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lossyact.codec.huffman import (
    canonical_codebook,
    code_lengths,
    huffman_decode,
    huffman_encode,
)
from lossyact.errors import DecodeError
from oracles import huffman_total_bits


def roundtrip(stream):
    book, bits, nbits = huffman_encode(np.asarray(stream, dtype=np.int64))
    return huffman_decode(book, bits, nbits, len(stream)), book, bits, nbits


def test_skewed_stream():
    out, book, _, nbits = roundtrip([0, 0, 0, 0, 0, 0, 0, 1])
    assert list(out) == [0] * 7 + [1]
    assert nbits < 8 * 32
    assert nbits == 8  # two symbols, one bit each


def test_single_symbol_gets_one_bit():
    out, book, bits, nbits = roundtrip([3, 3, 3])
    assert list(out) == [3, 3, 3]
    assert book == [(3, 1)]
    assert nbits == 3


def test_geometric_stream_near_entropy(rng):
    codes = rng.geometric(0.3, size=10**5)
    out, _, _, nbits = roundtrip(codes)
    np.testing.assert_array_equal(out, codes)
    _, counts = np.unique(codes, return_counts=True)
    p = counts / counts.sum()
    entropy = float(-(p * np.log2(p)).sum())
    assert nbits / len(codes) <= entropy + 1 + 0.1
    assert nbits / len(codes) >= entropy


@given(st.lists(st.integers(0, 300), min_size=1, max_size=400))
def test_roundtrip_identity_and_optimality(stream):
    out, book, _, nbits = roundtrip(stream)
    assert list(out) == stream
    _, counts = np.unique(stream, return_counts=True)
    assert nbits == huffman_total_bits(list(counts))


@given(st.dictionaries(st.integers(0, 1000), st.integers(1, 10**6), min_size=2, max_size=60))
def test_lengths_satisfy_kraft_with_equality(freq):
    lengths = code_lengths(list(freq), list(freq.values()))
    assert sum(2.0 ** -n for n in lengths.values()) == pytest.approx(1.0)


def test_canonical_order_is_deterministic():
    lengths = code_lengths([5, 1, 9, 2], [10, 10, 1, 1])
    book = canonical_codebook(lengths)
    assert book == sorted(book, key=lambda p: (p[1], p[0]))
    again = canonical_codebook(code_lengths([9, 2, 5, 1], [1, 1, 10, 10]))
    assert book == again


def test_truncated_bitstream_is_decode_error(rng):
    stream = rng.integers(0, 50, 1000)
    book, bits, nbits = huffman_encode(stream)
    with pytest.raises(DecodeError):
        huffman_decode(book, bits[: len(bits) // 2], nbits, len(stream))
    with pytest.raises(DecodeError):
        huffman_decode(book, bits, nbits // 2, len(stream))


def test_invalid_codebooks_rejected():
    with pytest.raises(DecodeError):
        huffman_decode([(0, 1), (1, 1), (2, 1)], b"\x00", 3, 3)  # Kraft violated
    with pytest.raises(DecodeError):
        huffman_decode([(0, 2), (1, 1)], b"\x00", 3, 3)  # not canonical order


def test_unused_codeword_is_decode_error():
    # lengths 1 and 2 leave codeword 11 unassigned
    with pytest.raises(DecodeError):
        huffman_decode([(0, 1), (1, 2)], b"\xff", 8, 4)
