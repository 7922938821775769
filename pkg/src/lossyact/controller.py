"""Adaptive per-layer error-bound control for compressed convolution activations.

Every ``W`` iterations the controller samples, per convolution layer, the mean
absolute output gradient (``l_bar``), the nonzero ratio of the layer input
(``r``) and the mean absolute momentum of the layer weights (``m_avg``). The
acceptable gradient-error std is ``sigma_fraction * m_avg``; inverting the
sigma estimator gives the error bound used for the next window.

During training the controller is the network's activation store: convolution
inputs are compressed in the forward pass (``wrap_forward``) and decompressed
in the backward pass (``unwrap_backward``).
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import fit_coefficient, predict_sigma
from .codec import CodecParams, CompressedTensor, Predictor, compress, compression_ratio, decompress
from .errors import ConfigError, DecodeError, LossyActError
from .nn.layers import conv2d_grad_weights, recompute_relu
from .tensor import mean_abs, nonzero_ratio

log = logging.getLogger(__name__)

LEDGER_COLUMNS = ["iteration", "layer", "eb", "predicted_sigma", "L_bar", "R", "M_avg", "ratio",
                  "fallback_flag"]


class ZeroRestoration(str, enum.Enum):
    CODEC_FILTER = "codec-filter"
    RELU_RECOMPUTE = "relu-recompute"


@dataclass(frozen=True)
class ControllerConfig:
    W: int = 1000
    sigma_fraction: float = 0.01
    coefficient_a: float = 0.32
    eb_min: float = 1e-8
    eb_max: float = 1e-1
    zero_restoration: ZeroRestoration = ZeroRestoration.CODEC_FILTER
    predictor: Predictor = Predictor.PREVIOUS
    calibrate_a: bool = False  # fit coefficient_a on the first collected taps

    def __post_init__(self):
        object.__setattr__(self, "zero_restoration", ZeroRestoration(self.zero_restoration))
        object.__setattr__(self, "predictor", Predictor(self.predictor))
        if self.W < 1:
            raise ConfigError("W must be >= 1")
        if not self.sigma_fraction > 0:
            raise ConfigError("sigma_fraction must be positive")
        if not self.coefficient_a > 0:
            raise ConfigError("coefficient_a must be positive")
        if not 0 < self.eb_min <= self.eb_max:
            raise ConfigError("need 0 < eb_min <= eb_max")


@dataclass(frozen=True)
class LayerStats:
    layer: int
    l_bar: float
    r: float
    m_avg: float
    n: int
    collected_at: int
    l_max_mean: float = 0.0  # mean over samples of max |loss|, logged only

    @property
    def degenerate(self) -> bool:
        return not (self.l_bar > 0 and self.m_avg > 0 and self.r > 0)


@dataclass
class LedgerRecord:
    iteration: int
    layer: int
    eb: float
    predicted_sigma: float
    L_bar: float
    R: float
    M_avg: float
    ratio: float
    fallback_flag: bool


class CompressionLedger:
    """Append-only log with one record per (layer, collection window)."""

    def __init__(self, path=None):
        self.records: list[LedgerRecord] = []
        self._keys = set()
        self.path = path
        if path is not None:
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(LEDGER_COLUMNS)

    def append(self, rec: LedgerRecord) -> None:
        key = (rec.layer, rec.iteration)
        if key in self._keys:
            raise ValueError(f"ledger already has a record for layer {rec.layer} at {rec.iteration}")
        self._keys.add(key)
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow(_row(rec))

    def for_layer(self, layer: int) -> list[LedgerRecord]:
        return [r for r in self.records if r.layer == layer]


def _row(rec: LedgerRecord):
    return [rec.iteration, rec.layer, repr(rec.eb), repr(rec.predicted_sigma), repr(rec.L_bar),
            repr(rec.R), repr(rec.M_avg), repr(rec.ratio), int(rec.fallback_flag)]


def target_sigma(stats: LayerStats, cfg: ControllerConfig) -> float | None:
    """Acceptable gradient-error std, or None when the stats cannot support one."""
    if not stats.m_avg > 0:
        return None
    return cfg.sigma_fraction * stats.m_avg


def compute_error_bound(stats: LayerStats, sigma: float, cfg: ControllerConfig) -> float | None:
    """``sigma / (a * l_bar * sqrt(n * r))`` clamped to the configured range; None = fallback."""
    if sigma is None or not sigma > 0 or not stats.l_bar > 0 or not stats.r > 0:
        return None
    eb = sigma / (cfg.coefficient_a * stats.l_bar * math.sqrt(stats.n * stats.r))
    if not math.isfinite(eb):
        return None
    return min(max(eb, cfg.eb_min), cfg.eb_max)


@dataclass(eq=False)
class CompressedHandle:
    layer: int
    shape: tuple
    blob: CompressedTensor | None = None
    raw: np.ndarray | None = None
    recompute_relu: bool = False
    eb: float = 0.0

    @property
    def nbytes(self) -> int:
        if self.blob is not None:
            return self.blob.compressed_bytes
        return int(self.raw.nbytes)

    @property
    def ratio(self) -> float:
        return compression_ratio(self.blob) if self.blob is not None else 1.0


@dataclass
class _Window:
    start: int
    stats: LayerStats
    eb: float | None
    sigma_pred: float = 0.0
    ratios: list = field(default_factory=list)


class AdaptiveController:
    def __init__(self, cfg: ControllerConfig, ledger: CompressionLedger | None = None):
        self.cfg = cfg
        self.ledger = ledger if ledger is not None else CompressionLedger()
        self.iteration = 0
        self.windows: dict[int, _Window] = {}
        self.collections: dict[int, int] = {}
        self.held_bytes = 0
        self.peak_held_bytes = 0
        self.iteration_log: list[dict] = []  # per-iteration memory accounting
        self.saved = []
        self.coefficients: dict[int, float] = {}
        self.calibrated = not cfg.calibrate_a

    # -- iteration bookkeeping --------------------------------------------------

    def begin_iteration(self, t: int) -> None:
        self.iteration = t
        self.peak_held_bytes = self.held_bytes
        self.saved = []

    def end_iteration(self) -> None:
        self.iteration_log.append({
            "iteration": self.iteration,
            "peak_held_bytes": self.peak_held_bytes,
            "saved_bytes": sum(h.nbytes for h in self.saved),
            "raw_bytes": sum(int(np.prod(h.shape)) * 4 for h in self.saved),
            "compressed_layers": [h.layer for h in self.saved if h.blob is not None],
        })
        self.saved = []

    def is_collection_iteration(self, t: int | None = None) -> bool:
        t = self.iteration if t is None else t
        return t % self.cfg.W == 0

    def current_eb(self, layer: int) -> float | None:
        w = self.windows.get(layer)
        return None if w is None else w.eb

    # -- phases 1-3 ---------------------------------------------------------------

    def calibrate(self, taps: dict, geometry: dict, n: int) -> dict[int, float]:
        """Fit a per-layer estimator coefficient from exact gradient-error variances.

        ``taps`` maps layer -> (activation, loss); ``geometry`` maps layer ->
        (kh, kw, stride, padding). For unit error bound and zeros kept exact,
        the variance of weight-gradient element (k, c, i, j) is one third of
        the weight gradient of (activation != 0) against loss**2. The
        coefficient grows with the square root of the layer's output plane
        size, so one value per layer is fitted.
        """
        for layer, (act, loss) in sorted(taps.items()):
            kh, kw, stride, padding = geometry[layer]
            loss = np.asarray(loss, dtype=np.float64)
            mask = (np.asarray(act) != 0).astype(np.float64)
            var = conv2d_grad_weights(mask, loss * loss, kh, kw, stride, padding) / 3.0
            r = nonzero_ratio(act)
            l_bar = mean_abs(loss)
            if l_bar > 0 and r > 0:
                sigma_unit = math.sqrt(float(var.mean()))
                self.coefficients[layer] = fit_coefficient([(l_bar, n, 1.0, r, sigma_unit)])
                log.info("layer %d: calibrated coefficient a = %.6g", layer, self.coefficients[layer])
        self.calibrated = True
        return dict(self.coefficients)

    def coefficient(self, layer: int) -> float:
        return self.coefficients.get(layer, self.cfg.coefficient_a)

    def collect_stats(self, layer: int, activation, loss, momentum, n: int) -> LayerStats:
        """Sample the layer's training status and open a new window with a fresh bound."""
        loss = np.asarray(loss)
        per_sample_max = np.abs(loss.reshape(len(loss), -1)).max(axis=1)
        stats = LayerStats(layer=layer, l_bar=mean_abs(loss), r=nonzero_ratio(activation),
                           m_avg=mean_abs(momentum), n=int(n), collected_at=self.iteration,
                           l_max_mean=float(per_sample_max.mean()))
        self._close_window(layer)
        self.collections[layer] = self.collections.get(layer, 0) + 1
        eb = None
        sigma = None
        if not stats.degenerate:
            sigma = target_sigma(stats, self.cfg)
            cfg = dataclasses.replace(self.cfg, coefficient_a=self.coefficient(layer))
            eb = compute_error_bound(stats, sigma, cfg)
        win = _Window(self.iteration, stats, eb)
        if eb is not None:
            win.sigma_pred = predict_sigma(stats.l_bar, stats.n, eb, stats.r,
                                           self.coefficient(layer)).predicted_sigma
        else:
            log.debug("layer %d: degenerate stats at iteration %d, uncompressed window",
                      layer, self.iteration)
        self.windows[layer] = win
        return stats

    def _close_window(self, layer: int) -> None:
        w = self.windows.pop(layer, None)
        if w is None:
            return
        ratio = float(np.mean(w.ratios)) if w.ratios else 1.0
        s = w.stats
        self.ledger.append(LedgerRecord(
            iteration=w.start, layer=layer, eb=w.eb if w.eb is not None else 0.0,
            predicted_sigma=w.sigma_pred, L_bar=s.l_bar, R=s.r, M_avg=s.m_avg,
            ratio=ratio, fallback_flag=w.eb is None))

    def close(self) -> None:
        for layer in sorted(self.windows):
            self._close_window(layer)

    # -- phase 4: activation store -------------------------------------------------

    def wrap_forward(self, layer: int, activation, pre_activation=None) -> CompressedHandle:
        activation = np.asarray(activation)
        handle = CompressedHandle(layer, activation.shape)
        win = self.windows.get(layer)
        eb = win.eb if win is not None else None
        if eb is not None:
            use_relu = (self.cfg.zero_restoration == ZeroRestoration.RELU_RECOMPUTE
                        and pre_activation is not None)
            source = pre_activation if use_relu else activation
            try:
                handle.blob = compress(source, CodecParams(eb, predictor=self.cfg.predictor))
                handle.recompute_relu = use_relu
                handle.eb = eb
            except LossyActError as exc:
                log.warning("layer %d: compression failed (%s); keeping raw activation", layer, exc)
                handle.blob = None
        if handle.blob is None:
            handle.raw = activation
        if win is not None:
            win.ratios.append(handle.ratio)
        self.held_bytes += handle.nbytes
        self.peak_held_bytes = max(self.peak_held_bytes, self.held_bytes)
        self.saved.append(handle)
        return handle

    def unwrap_backward(self, handle: CompressedHandle) -> np.ndarray:
        self.held_bytes -= handle.nbytes
        if handle.blob is None:
            return handle.raw
        try:
            if handle.recompute_relu:
                return recompute_relu(decompress(handle.blob, zero_filter=False))
            return decompress(handle.blob, zero_filter=True)
        except (DecodeError, ValueError) as exc:
            raise DecodeError(f"layer {handle.layer}: cannot decompress saved activation "
                              f"at iteration {self.iteration}: {exc}") from exc

    # the Network activation-store protocol
    save = wrap_forward
    load = unwrap_backward
