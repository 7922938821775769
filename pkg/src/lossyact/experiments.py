"""Experiment drivers behind the CLI: error-injection studies, coefficient fits, training runs."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .analysis import (
    distribution_report,
    exact_sigma,
    fit_coefficient,
    inject_uniform_error,
    predict_sigma,
)
from .controller import AdaptiveController, CompressionLedger, ControllerConfig
from .errors import ConfigError
from .nn import layers as L
from .nn.data import load_idx_dataset, load_tnsr_dataset, synthetic_digits
from .nn.net import DEFAULT_ARCHITECTURE, parse_architecture
from .tensor import mean_abs
from .training import TrainConfig, train, write_rows

PAPER_COEFFICIENT_A = 0.32


@dataclass(frozen=True)
class ConvGeometry:
    channels: int
    height: int
    width: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    @classmethod
    def parse(cls, text: str, stride: int = 1, padding: int = 0) -> "ConvGeometry":
        """``CxHxW:KxKHxKW``, e.g. ``3x10x10:4x3x3``."""
        m = re.fullmatch(r"(\d+)x(\d+)x(\d+):(\d+)x(\d+)x(\d+)", text.strip())
        if not m:
            raise ConfigError(f"bad geometry {text!r}, expected CxHxW:KxKHxKW")
        g = cls(*map(int, m.groups()), stride=stride, padding=padding)
        if min(g.channels, g.height, g.width, g.out_channels, g.kernel_h, g.kernel_w) < 1:
            raise ConfigError(f"geometry {text!r} has a zero extent")
        try:
            g.output_hw
        except ValueError as exc:
            raise ConfigError(f"infeasible geometry {text!r}: {exc}") from None
        return g

    @property
    def output_hw(self) -> tuple[int, int]:
        return (L.conv_output_size(self.height, self.kernel_h, self.stride, self.padding),
                L.conv_output_size(self.width, self.kernel_w, self.stride, self.padding))

    @property
    def fan_in(self) -> int:
        """Loss values per sample feeding one weight-gradient element."""
        h, w = self.output_hw
        return h * w

    @property
    def label(self) -> str:
        return (f"{self.channels}x{self.height}x{self.width}:"
                f"{self.out_channels}x{self.kernel_h}x{self.kernel_w}")


@dataclass
class GradientErrorSample:
    errors: np.ndarray  # trials x K x C x kh x kw, observed gradient errors
    exact: np.ndarray  # K x C x kh x kw, exact std per element
    l_bar: float  # mean |loss| of the batch-mean objective gradient
    l_max_mean: float  # mean over samples of max |per-sample loss|
    r: float  # measured nonzero ratio of the activation
    n: int

    @property
    def empirical_sigma(self) -> float:
        return float(np.sqrt(np.mean(self.errors ** 2)))

    @property
    def exact_sigma_rms(self) -> float:
        return float(np.sqrt(np.mean(self.exact ** 2)))

    def standardized(self) -> np.ndarray:
        return self.errors / self.exact


def make_layer_inputs(geom: ConvGeometry, n: int, r: float, rng, loss_scale: float = 1.0):
    """Activation with a fraction ``1 - r`` of exact zeros, and per-sample losses."""
    act = rng.uniform(0.1, 1.0, size=(n, geom.channels, geom.height, geom.width))
    if r < 1.0:
        act[rng.random(act.shape) >= r] = 0.0
    ho, wo = geom.output_hw
    per_sample = rng.normal(0.0, loss_scale, size=(n, geom.out_channels, ho, wo))
    return act, per_sample


def conv_exact_sigma(geom: ConvGeometry, act, per_sample_loss, eb, preserve_zeros) -> np.ndarray:
    """Exact error std of every weight-gradient element, one ``exact_sigma`` call each."""
    n = act.shape[0]
    ho, wo = geom.output_hw
    p, s = geom.padding, geom.stride
    real = np.ones_like(act, dtype=bool)
    if preserve_zeros:
        real &= act != 0
    real = np.pad(real, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.empty((geom.out_channels, geom.channels, geom.kernel_h, geom.kernel_w))
    for c in range(geom.channels):
        for i in range(geom.kernel_h):
            for j in range(geom.kernel_w):
                mask = real[:, c, i:i + s * ho:s, j:j + s * wo:s].reshape(n, -1)
                for k in range(geom.out_channels):
                    out[k, c, i, j] = exact_sigma(per_sample_loss[:, k].reshape(n, -1), eb, mask)
    return out


def gradient_error_trials(geom: ConvGeometry, n: int, eb: float, trials: int, *,
                          preserve_zeros: bool = True, r: float = 1.0, loss_scale: float = 1.0,
                          seed=0) -> GradientErrorSample:
    """Inject uniform error into a conv layer's activation and record weight-gradient errors.

    Everything runs in double precision. The loss handed to the backward pass
    is the batch-mean objective gradient (per-sample loss / n).
    """
    rng = np.random.default_rng(seed)
    act, per_sample = make_layer_inputs(geom, n, r, rng, loss_scale)
    loss = per_sample / n
    kh, kw, st, pd = geom.kernel_h, geom.kernel_w, geom.stride, geom.padding
    clean = L.conv2d_grad_weights(act, loss, kh, kw, st, pd)
    errors = np.empty((trials,) + clean.shape)
    for t in range(trials):
        noisy = inject_uniform_error(act, eb, preserve_zeros, rng)
        errors[t] = L.conv2d_grad_weights(noisy, loss, kh, kw, st, pd) - clean
    exact = conv_exact_sigma(geom, act, per_sample, eb, preserve_zeros)
    maxes = np.abs(per_sample.reshape(n, -1)).max(axis=1)
    return GradientErrorSample(errors, exact, mean_abs(loss), float(maxes.mean()),
                               float(np.count_nonzero(act)) / act.size, n)


# -- error study ---------------------------------------------------------------

ERROR_STUDY_SCHEMA = {
    "geometries": ("3x10x10:4x3x3", "2x14x14:3x5x5"),
    "batch_sizes": (8, 32, 128),
    "error_bounds": (1e-5, 1e-4, 1e-3),
    "nonzero_ratios": (1.0,),
    "trials": 2000,
    "preserve_zeros": True,
    "loss_scale": 1.0,
    "stride": 1,
    "padding": 0,
    "coefficient_a": PAPER_COEFFICIENT_A,
}


def _case_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, index])


def error_study(cfg: dict, out_dir, seed: int = 0) -> dict:
    """Grid of injection experiments; writes per-case reports and a summary table."""
    out = Path(out_dir)
    (out / "cases").mkdir(parents=True, exist_ok=True)
    geoms = [ConvGeometry.parse(g, cfg["stride"], cfg["padding"]) for g in cfg["geometries"]]
    if cfg["trials"] < 2:
        raise ConfigError("trials must be >= 2")
    cases = []
    index = 0
    for gi, geom in enumerate(geoms):
        for r in cfg["nonzero_ratios"]:
            if not 0 < r <= 1:
                raise ConfigError(f"nonzero ratio {r} outside (0, 1]")
            for n in cfg["batch_sizes"]:
                for eb in cfg["error_bounds"]:
                    if not eb > 0 or n < 1:
                        raise ConfigError("error bounds and batch sizes must be positive")
                    case_seed = int(_case_seed(seed, index).generate_state(1)[0])
                    sample = gradient_error_trials(
                        geom, n, eb, cfg["trials"], preserve_zeros=cfg["preserve_zeros"], r=r,
                        loss_scale=cfg["loss_scale"], seed=case_seed)
                    report = distribution_report(sample.standardized(), 1.0, seed=case_seed)
                    name = f"case{index:03d}"
                    case = {
                        "name": name, "geometry": geom.label, "fan_in": geom.fan_in, "N": n,
                        "eb": eb, "R_target": r, "R": sample.r,
                        "preserve_zeros": cfg["preserve_zeros"], "trials": cfg["trials"],
                        "seed": case_seed, "L_bar": sample.l_bar, "L_max_mean": sample.l_max_mean,
                        "empirical_sigma": sample.empirical_sigma,
                        "exact_sigma": sample.exact_sigma_rms,
                        "predicted_sigma_default_a": predict_sigma(
                            sample.l_bar, n, eb, sample.r, cfg["coefficient_a"]).predicted_sigma,
                        "within_one_sigma": report.within_one_sigma,
                    }
                    report.extra = {k: v for k, v in case.items() if k != "name"}
                    (out / "cases" / f"{name}.json").write_text(report.to_json())
                    report.write_histogram_csv(out / "cases" / f"{name}_hist.csv")
                    cases.append(case)
                    index += 1
    fitted = fit_coefficient([(c["L_bar"], c["N"], c["eb"], c["R"], c["empirical_sigma"])
                              for c in cases])
    for c in cases:
        c["predicted_sigma_fitted_a"] = predict_sigma(c["L_bar"], c["N"], c["eb"], c["R"],
                                                      fitted).predicted_sigma
    _write_table(out / "summary.csv", cases)
    result = {"config": _jsonable(cfg), "seed": seed, "fitted_a": fitted,
              "paper_default_a": PAPER_COEFFICIENT_A, "cases": cases}
    (out / "study.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


def fit_a(cfg: dict, out_dir, seed: int = 0, study_path=None) -> dict:
    """Fit the estimator coefficient over an error study (read from disk or run inline)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if study_path:
        study = json.loads(Path(study_path).read_text())
    else:
        study = error_study(cfg, out / "study", seed)
    cases = study["cases"]
    obs = [(c["L_bar"], c["N"], c["eb"], c["R"], c["empirical_sigma"]) for c in cases]
    fitted = fit_coefficient(obs)
    fitted_lmax = fit_coefficient([(c["L_max_mean"], c["N"], c["eb"], c["R"],
                                    c["empirical_sigma"]) for c in cases])
    residuals = []
    for c in cases:
        pred = predict_sigma(c["L_bar"], c["N"], c["eb"], c["R"], fitted).predicted_sigma
        residuals.append({"name": c["name"], "geometry": c["geometry"], "N": c["N"], "eb": c["eb"],
                          "empirical_sigma": c["empirical_sigma"], "predicted_sigma": pred,
                          "ratio": pred / c["empirical_sigma"]})
    ratios = [r["ratio"] for r in residuals]
    result = {
        "seed": study.get("seed", seed),
        "config": study.get("config", _jsonable(cfg)),
        "fitted_a": fitted,
        "fitted_a_using_L_max": fitted_lmax,
        "paper_default_a": PAPER_COEFFICIENT_A,
        "max_fold_error": max(max(ratios), 1 / min(ratios)),
        "residuals": residuals,
    }
    (out / "fit_a.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


# -- training ------------------------------------------------------------------

TRAIN_SCHEMA = {
    "dataset": "synthetic",
    "n_train": 8000,
    "n_test": 4000,
    "image_size": 16,
    "train_images": "",
    "train_labels": "",
    "test_images": "",
    "test_labels": "",
    "architecture": "",
    "epochs": 3,
    "batch_size": 32,
    "lr": 0.02,
    "momentum": 0.9,
    "lr_step": 0,
    "lr_decay": 0.1,
    "eval_every": 0,
    "W": 100,
    "sigma_fraction": 0.01,
    "coefficient_a": "auto",
    "eb_min": 1e-8,
    "eb_max": 1e-1,
    "zero_restoration": "codec-filter",
    "predictor": "previous",
}

PREDICTORS = {"previous": 0, "lorenzo2d": 1}


def controller_config(cfg: dict) -> ControllerConfig:
    a = str(cfg["coefficient_a"]).strip()
    try:
        pred = PREDICTORS[cfg["predictor"]]
    except KeyError:
        raise ConfigError(f"predictor must be one of {sorted(PREDICTORS)}") from None
    try:
        coefficient = PAPER_COEFFICIENT_A if a == "auto" else float(a)
        return ControllerConfig(W=int(cfg["W"]), sigma_fraction=float(cfg["sigma_fraction"]),
                                coefficient_a=coefficient, eb_min=float(cfg["eb_min"]),
                                eb_max=float(cfg["eb_max"]),
                                zero_restoration=cfg["zero_restoration"], predictor=pred,
                                calibrate_a=a == "auto")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_datasets(cfg: dict, seed: int):
    kind = cfg["dataset"]
    if kind == "synthetic":
        return (synthetic_digits(cfg["n_train"], seed=seed, size=cfg["image_size"]),
                synthetic_digits(cfg["n_test"], seed=seed + 1, size=cfg["image_size"]))
    paths = [cfg[k] for k in ("train_images", "train_labels", "test_images", "test_labels")]
    if not all(paths):
        raise ConfigError(f"dataset={kind} needs train/test image and label paths")
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"dataset file not found: {p}")
    loader = {"idx": load_idx_dataset, "tnsr": load_tnsr_dataset}.get(kind)
    if loader is None:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    return loader(paths[0], paths[1]), loader(paths[2], paths[3])


def train_pair(cfg: dict, out_dir, seed: int = 0) -> dict:
    """Baseline and compressed training with identical seeds; writes CSVs and a summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arch = Path(cfg["architecture"]).read_text() if cfg["architecture"] else DEFAULT_ARCHITECTURE
    specs = parse_architecture(arch)
    ccfg = controller_config(cfg)
    train_ds, test_ds = load_datasets(cfg, seed)
    tcfg = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                       momentum=cfg["momentum"], lr_step=cfg["lr_step"], lr_decay=cfg["lr_decay"],
                       eval_every=cfg["eval_every"], seed=seed)
    base = train(specs, train_ds, test_ds, tcfg, checkpoint_dir=out / "checkpoint_baseline")
    write_rows(out / "baseline.csv", base.rows)
    controller = AdaptiveController(ccfg, CompressionLedger(out / "ledger.csv"))
    comp = train(specs, train_ds, test_ds, tcfg, controller,
                 checkpoint_dir=out / "checkpoint_compressed")
    write_rows(out / "compressed.csv", comp.rows)
    write_rows(out / "memory.csv", [
        {k: (" ".join(map(str, v)) if isinstance(v, list) else v) for k, v in row.items()}
        for row in controller.iteration_log])
    ratios = [v for row in comp.rows for k, v in row.items() if k.startswith("ratio_layer")]
    compressed = [r for _, _, r in comp.compressed_ratios]
    raw = sum(row["raw_bytes"] for row in controller.iteration_log)
    held = sum(row["saved_bytes"] for row in controller.iteration_log)
    summary = {
        "config": _jsonable(cfg),
        "seed": seed,
        "iterations": comp.iterations,
        "baseline_accuracy": base.final_accuracy,
        "compressed_accuracy": comp.final_accuracy,
        "accuracy_delta_pct_points": 100.0 * (comp.final_accuracy - base.final_accuracy),
        # pass-through saves count with ratio 1
        "mean_conv_compression_ratio": float(np.mean(ratios)) if ratios else 1.0,
        "mean_ratio_of_compressed_saves": float(np.mean(compressed)) if compressed else 1.0,
        "overall_conv_compression_ratio": raw / held if held else 1.0,
        "compressed_fraction_of_saves": len(compressed) / max(1, len(ratios)),
        "calibrated_coefficients": {str(k): v for k, v in sorted(controller.coefficients.items())},
        "peak_held_bytes": max((r["peak_held_bytes"] for r in controller.iteration_log), default=0),
        "peak_raw_bytes": max((r["raw_bytes"] for r in controller.iteration_log), default=0),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    timing = {
        "baseline_seconds": base.wall_time,
        "compressed_seconds": comp.wall_time,
        "overhead_pct": 100.0 * (comp.wall_time - base.wall_time) / base.wall_time,
    }
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True))
    summary["timing"] = timing
    summary["ledger"] = controller.ledger
    return summary


def _write_table(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _jsonable(cfg: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()}
