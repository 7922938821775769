from .huffman import huffman_decode, huffman_encode
from .sz import (
    CodecParams,
    CompressedTensor,
    Predictor,
    compress,
    compression_ratio,
    decompress,
    load_blob,
    save_blob,
)

__all__ = [
    "CodecParams",
    "CompressedTensor",
    "Predictor",
    "compress",
    "compression_ratio",
    "decompress",
    "huffman_decode",
    "huffman_encode",
    "load_blob",
    "save_blob",
]
