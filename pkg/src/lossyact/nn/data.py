"""Datasets: IDX (MNIST-style) files, TNSR pairs, and a synthetic stroke-digit generator."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..tensor import load_tensor

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


@dataclass
class Dataset:
    images: np.ndarray  # N, C, H, W float32
    labels: np.ndarray  # N int64

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if str(path).endswith(".gz"):
        raw = gzip.decompress(raw)
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise FormatError("not an IDX file (bad magic)", 0)
    dtype, ndim = raw[2], raw[3]
    if dtype not in _IDX_TYPES:
        raise FormatError(f"unknown IDX element type 0x{dtype:02x}", 2)
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    offset = 4 + 4 * ndim
    count = int(np.prod(dims))
    dt = np.dtype(_IDX_TYPES[dtype])
    if len(raw) - offset != count * dt.itemsize:
        raise FormatError("IDX payload size does not match its dimensions", offset)
    return np.frombuffer(raw, dtype=dt, offset=offset).reshape(dims)


def load_idx_dataset(images_path, labels_path) -> Dataset:
    images = read_idx(images_path).astype(np.float32)
    if images.ndim == 3:
        images = images[:, None]
    if images.max() > 1.0:
        images /= 255.0
    labels = read_idx(labels_path).astype(np.int64)
    if len(labels) != len(images):
        raise FormatError("image and label counts differ")
    return Dataset(np.ascontiguousarray(images), labels)


def load_tnsr_dataset(images_path, labels_path) -> Dataset:
    images = np.array(load_tensor(images_path), dtype=np.float32)
    if images.ndim == 3:
        images = images[:, None]
    labels = np.asarray(load_tensor(labels_path)).astype(np.int64).ravel()
    if len(labels) != len(images):
        raise FormatError("image and label counts differ")
    return Dataset(images, labels)


def synthetic_digits(n: int, seed: int = 0, size: int = 16, classes: int = 10,
                     prototype_seed: int = 1234) -> Dataset:
    """Stroke images in the spirit of MNIST.

    Each class is a fixed set of line segments (drawn from ``prototype_seed``);
    samples jitter the segments with a random rotation, scale and shift, gain
    one random distractor stroke, and render as anti-aliased strokes on a zero
    background.
    """
    proto_rng = np.random.default_rng(prototype_seed)
    prototypes = proto_rng.uniform(0.2, 0.8, size=(classes, 3, 2, 2))  # class, segment, end, xy
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n)
    angle = rng.uniform(-0.35, 0.35, n)
    scale = rng.uniform(0.75, 1.25, n)
    shift = rng.uniform(-0.1, 0.1, (n, 2))
    distractor = rng.uniform(0.1, 0.9, size=(n, 1, 1, 2)) + rng.uniform(-0.15, 0.15, size=(n, 1, 2, 2))
    width = rng.uniform(0.05, 0.08, n)
    cos, sin = np.cos(angle), np.sin(angle)
    rot = np.stack([np.stack([cos, -sin], -1), np.stack([sin, cos], -1)], -2) * scale[:, None, None]
    seg = prototypes[labels] - 0.5  # n, 3, 2, 2
    seg = np.einsum("nij,nsej->nsei", rot, seg) + 0.5 + shift[:, None, None, :]
    seg = np.concatenate([seg, distractor], axis=1)
    grid = (np.arange(size) + 0.5) / size
    py, px = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([px, py], -1).reshape(1, 1, -1, 2)  # 1, 1, P, 2
    a = seg[:, :, 0][:, :, None, :]
    b = seg[:, :, 1][:, :, None, :]
    ab = b - a
    t = np.clip(((pts - a) * ab).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-9), 0, 1)
    dist = np.linalg.norm(pts - (a + t[..., None] * ab), axis=-1).min(axis=1)  # n, P
    img = np.clip(1.0 - dist / width[:, None], 0.0, 1.0)
    return Dataset(img.reshape(n, 1, size, size).astype(np.float32), labels.astype(np.int64))
