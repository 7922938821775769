"""Independent reference implementations used to derive expected values in tests.

Each oracle is a deliberately naive scalar loop, written without reusing any of
the package's kernels.
"""
import heapq
import math

import numpy as np


def quantize_scalar(v, pred, eb, radius):
    """(code, float32 reconstruction) or None for an outlier."""
    lo = -(radius - 1) if 2 * radius <= 0xFFFF else -(radius - 2)
    hi = radius - 1
    q = (v - pred) / (2.0 * eb)
    if not (lo - 0.5 < q < hi + 0.5):
        return None
    code = int(math.floor(abs(q) + 0.5)) * (1 if q >= 0 else -1)
    if code < lo or code > hi:
        return None
    r = float(np.float32(pred + code * 2.0 * eb))
    if abs(r - v) > eb:
        return None
    return code, r


def scan_previous(values, eb, radius=2**15):
    """Previous-value predictor over a flat sequence: (codes or None, reconstruction)."""
    codes, recon = [], []
    prev = 0.0
    for v in np.asarray(values, dtype=np.float32).ravel():
        v = float(v)
        res = quantize_scalar(v, prev, eb, radius)
        if res is None:
            codes.append(None)
            recon.append(v)
        else:
            codes.append(res[0])
            recon.append(res[1])
        prev = recon[-1]
    return codes, np.array(recon, dtype=np.float32)


def scan_lorenzo2d(plane, eb, radius=2**15):
    plane = np.asarray(plane, dtype=np.float32)
    h, w = plane.shape
    rec = np.zeros((h, w))
    codes = []
    for i in range(h):
        for j in range(w):
            left = rec[i, j - 1] if j else 0.0
            top = rec[i - 1, j] if i else 0.0
            corner = rec[i - 1, j - 1] if i and j else 0.0
            v = float(plane[i, j])
            res = quantize_scalar(v, left + top - corner, eb, radius)
            if res is None:
                codes.append(None)
                rec[i, j] = v
            else:
                codes.append(res[0])
                rec[i, j] = res[1]
    return codes, rec.astype(np.float32)


def huffman_total_bits(counts):
    """Bits of any optimal prefix code: the sum of all merge weights."""
    counts = [c for c in counts if c > 0]
    if len(counts) == 1:
        return counts[0]
    heap = list(counts)
    heapq.heapify(heap)
    total = 0
    while len(heap) > 1:
        a, b = heapq.heappop(heap), heapq.heappop(heap)
        total += a + b
        heapq.heappush(heap, a + b)
    return total


def blob_size(shape, codes, radius=2**15):
    """Serialized blob size implied by a code stream (None entries are outliers)."""
    symbols = [0 if c is None else c + radius for c in codes]
    _, counts = np.unique(symbols, return_counts=True)
    nbits = huffman_total_bits(list(counts))
    n_out = sum(c is None for c in codes)
    header = 4 + 3 + 8 * len(shape) + 8 + 4 + 4 + 2 + 5 * len(counts) + 8
    return header + (nbits + 7) // 8 + 12 * n_out


def conv2d_naive(x, w, stride=1, padding=0):
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for b in range(n):
        for o in range(k):
            for y in range(ho):
                for z in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                yy = y * stride + i - padding
                                zz = z * stride + j - padding
                                if 0 <= yy < h and 0 <= zz < wd:
                                    acc += x[b, ch, yy, zz] * w[o, ch, i, j]
                    out[b, o, y, z] = acc
    return out


def central_difference(f, x, h=1e-3):
    """Gradient of scalar ``f`` at array ``x`` (perturbed in place, then restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


def smooth_field(rng, shape, step=0.01):
    """Cumulative sum of small noise along the last axis."""
    return np.cumsum(rng.normal(0, step, size=shape), axis=-1).astype(np.float32)
