"""Prediction + linear quantization scan kernels.

Both predictors read *reconstructed* neighbours, so compressor and
decompressor see identical predictions and the error of each element is set
only by its own quantization. Symbols are ``code + radius``; symbol 0 is the
escape marker for verbatim outliers.

Reconstructed values are rounded to float32 (the payload type) before the
bound check, so an element whose float32 reconstruction would miss the bound
is escaped instead.
"""
import numba
import numpy as np

ESCAPE = 0


@numba.njit(cache=True, inline="always")
def _quantize(v, pred, eb, twoeb, lo, hi):
    """Returns (symbol offset code, reconstructed float32, ok)."""
    q = (v - pred) / twoeb
    if not (q > lo - 0.5 and q < hi + 0.5):
        return 0, np.float32(0.0), False
    if q >= 0.0:
        code = np.int64(np.floor(q + 0.5))
    else:
        code = -np.int64(np.floor(-q + 0.5))
    if code < lo or code > hi:
        return 0, np.float32(0.0), False
    r = np.float32(pred + code * twoeb)
    if abs(np.float64(r) - v) > eb:
        return 0, np.float32(0.0), False
    return code, r, True


@numba.njit(cache=True)
def scan_1d(values, eb, radius, lo, hi):
    n = values.shape[0]
    symbols = np.empty(n, dtype=np.int64)
    recon = np.empty(n, dtype=np.float32)
    outlier = np.zeros(n, dtype=np.bool_)
    twoeb = 2.0 * eb
    prev = 0.0
    for i in range(n):
        v = np.float64(values[i])
        code, r, ok = _quantize(v, prev, eb, twoeb, lo, hi)
        if ok:
            symbols[i] = code + radius
            recon[i] = r
        else:
            symbols[i] = ESCAPE
            recon[i] = values[i]
            outlier[i] = True
        prev = np.float64(recon[i])
    return symbols, recon, outlier


@numba.njit(cache=True)
def unscan_1d(symbols, outlier_values, eb, radius):
    n = symbols.shape[0]
    recon = np.empty(n, dtype=np.float32)
    twoeb = 2.0 * eb
    prev = 0.0
    k = 0
    for i in range(n):
        s = symbols[i]
        if s == ESCAPE:
            if k >= outlier_values.shape[0]:
                return recon, -1
            recon[i] = outlier_values[k]
            k += 1
        else:
            recon[i] = np.float32(prev + (s - radius) * twoeb)
        prev = np.float64(recon[i])
    return recon, k


@numba.njit(cache=True)
def _pred2d(recon, p, i, j):
    left = np.float64(recon[p, i, j - 1]) if j > 0 else 0.0
    top = np.float64(recon[p, i - 1, j]) if i > 0 else 0.0
    corner = np.float64(recon[p, i - 1, j - 1]) if (i > 0 and j > 0) else 0.0
    return left + top - corner


@numba.njit(cache=True)
def scan_2d(planes, eb, radius, lo, hi):
    P, H, W = planes.shape
    symbols = np.empty((P, H, W), dtype=np.int64)
    recon = np.empty((P, H, W), dtype=np.float32)
    outlier = np.zeros((P, H, W), dtype=np.bool_)
    twoeb = 2.0 * eb
    for p in range(P):
        for i in range(H):
            for j in range(W):
                v = np.float64(planes[p, i, j])
                pred = _pred2d(recon, p, i, j)
                code, r, ok = _quantize(v, pred, eb, twoeb, lo, hi)
                if ok:
                    symbols[p, i, j] = code + radius
                    recon[p, i, j] = r
                else:
                    symbols[p, i, j] = ESCAPE
                    recon[p, i, j] = planes[p, i, j]
                    outlier[p, i, j] = True
    return symbols, recon, outlier


@numba.njit(cache=True)
def unscan_2d(symbols, outlier_values, eb, radius):
    P, H, W = symbols.shape
    recon = np.empty((P, H, W), dtype=np.float32)
    twoeb = 2.0 * eb
    k = 0
    for p in range(P):
        for i in range(H):
            for j in range(W):
                s = symbols[p, i, j]
                if s == ESCAPE:
                    if k >= outlier_values.shape[0]:
                        return recon, -1
                    recon[p, i, j] = outlier_values[k]
                    k += 1
                else:
                    pred = _pred2d(recon, p, i, j)
                    recon[p, i, j] = np.float32(pred + (s - radius) * twoeb)
    return recon, k
