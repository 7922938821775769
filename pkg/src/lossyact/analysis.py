"""Propagation of uniform activation error into convolution weight gradients.

Model: each activation element receives independent error ``e ~ U(-eb, eb)``.
A weight-gradient element is a batch average of activation x loss products, so
its error is ``E = (1/N) * sum(e_j * L_j)`` with variance
``(eb**2 / 3) * sum(L_j**2) / N**2``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateFitError, DomainError, ParameterError

HIST_BINS = 41
HIST_HALF_WIDTH = 5.0  # in units of the reference sigma


@dataclass
class ErrorDistributionReport:
    empirical_sigma: float
    within_one_sigma: float
    reference_sigma: float
    histogram_edges: list[float]
    histogram_counts: list[int]
    sample_count: int
    degenerate: bool = False
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write_histogram_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            edges = self.histogram_edges
            for i, c in enumerate(self.histogram_counts):
                w.writerow([repr(edges[i]), repr(edges[i + 1]), c])


@dataclass(frozen=True)
class SigmaEstimate:
    predicted_sigma: float
    l_bar: float
    n: int
    eb: float
    r: float
    a: float


def inject_uniform_error(t, eb: float, preserve_zeros: bool = False, seed=0) -> np.ndarray:
    """``t + U(-eb, eb)`` noise, optionally leaving exact zeros untouched.

    ``seed`` may be an int or a ``numpy.random.Generator`` (used as is, which
    lets Monte-Carlo loops draw a fresh stream per trial without reseeding).
    """
    if not eb > 0:
        raise ParameterError(f"eb must be positive, got {eb}")
    t = np.asarray(t)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dtype = t.dtype if np.issubdtype(t.dtype, np.floating) else np.float64
    e = rng.uniform(-eb, eb, size=t.shape)
    out = (t.astype(np.float64) + e).astype(dtype)
    if preserve_zeros:
        out[t == 0] = 0
    return out


def exact_sigma(losses, eb: float, nonzero_mask=None) -> float:
    """Exact std of the modeled gradient error for one gradient element.

    ``losses`` has shape (N, n): per-sample loss values paired with the
    activations feeding the element. Positions where ``nonzero_mask`` is False
    hold exact zeros that carry no error.
    """
    if not eb > 0:
        raise ParameterError(f"eb must be positive, got {eb}")
    L = np.asarray(losses, dtype=np.float64)
    if L.ndim == 1:
        L = L[None, :]
    n_batch = L.shape[0]
    sq = L * L
    if nonzero_mask is not None:
        mask = np.asarray(nonzero_mask, dtype=bool)
        if mask.shape != L.shape:
            raise ParameterError(f"mask shape {mask.shape} does not match losses {L.shape}")
        sq = np.where(mask, sq, 0.0)
    return math.sqrt(eb * eb / 3.0 * float(sq.sum())) / n_batch


def predict_sigma(l_bar: float, n: int, eb: float, r: float = 1.0, a: float = 0.32) -> SigmaEstimate:
    """Closed-form estimate ``a * l_bar * sqrt(n) * eb * sqrt(r)``."""
    if not (l_bar > 0 and n >= 1 and eb > 0 and a > 0):
        raise ParameterError("l_bar, n, eb and a must be positive")
    if not 0 < r <= 1:
        raise ParameterError(f"nonzero ratio must be in (0, 1], got {r}")
    sigma = a * l_bar * math.sqrt(n) * eb * math.sqrt(r)
    return SigmaEstimate(sigma, l_bar, int(n), eb, r, a)


def estimator_scale(l_bar, n, eb, r=1.0) -> float:
    """The coefficient-free part of the estimator."""
    return l_bar * math.sqrt(n) * eb * math.sqrt(r)


def fit_coefficient(observations) -> float:
    """Least-squares ``a`` for observations ``(l_bar, n, eb, r, sigma)``."""
    obs = [tuple(map(float, o)) for o in observations]
    if not obs:
        raise DegenerateFitError("no observations")
    x = np.array([estimator_scale(lb, n, eb, r) for lb, n, eb, r, _ in obs])
    s = np.array([o[4] for o in obs])
    denom = float(np.dot(x, x))
    if denom == 0.0:
        raise DegenerateFitError("all estimator inputs are zero")
    return float(np.dot(x, s) / denom)


def distribution_report(errors, reference_sigma: float, seed=None) -> ErrorDistributionReport:
    err = np.asarray(errors, dtype=np.float64).ravel()
    if err.size == 0:
        raise DomainError("empty error sample")
    if not reference_sigma > 0:
        raise ParameterError("reference_sigma must be positive")
    sigma = float(err.std())
    within = float(np.count_nonzero(np.abs(err) <= reference_sigma)) / err.size
    edges = np.linspace(-HIST_HALF_WIDTH * reference_sigma, HIST_HALF_WIDTH * reference_sigma,
                        HIST_BINS + 1)
    # clip so every sample lands in a bin and counts sum to sample_count
    counts, _ = np.histogram(np.clip(err, edges[0], edges[-1]), bins=edges)
    return ErrorDistributionReport(
        empirical_sigma=sigma,
        within_one_sigma=within,
        reference_sigma=float(reference_sigma),
        histogram_edges=[float(e) for e in edges],
        histogram_counts=[int(c) for c in counts],
        sample_count=int(err.size),
        degenerate=sigma == 0.0,
        seed=seed,
    )
