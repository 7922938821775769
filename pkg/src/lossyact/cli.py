"""``lossyact`` command line: compress, decompress, error-study, fit-a, train.

Exit codes: 0 success, 1 I/O or other failure, 2 config error, 3 format error,
4 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import __version__, experiments
from .codec import CodecParams, Predictor, compress, compression_ratio, decompress, load_blob, save_blob
from .config import convert_value, resolve
from .errors import ConfigError, DecodeError, FormatError, NumericalAbort, ParameterError
from .tensor import load_tensor, max_abs_diff, save_tensor

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERICAL = 0, 1, 2, 3, 4

COMPRESS_SCHEMA = {"eb": 0.0, "predictor": "previous", "quant_radius": 2 ** 15}
DECOMPRESS_SCHEMA = {"filter": False}


def _overrides(schema: dict, pairs, **named) -> dict:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        key = key.strip()
        if not sep or key not in schema:
            raise ConfigError(f"bad --set {pair!r}: unknown key or missing '='")
        out[key] = convert_value(key, value.strip(), schema[key])
    out.update({k: v for k, v in named.items() if v is not None})
    return out


def _predictor(name: str) -> Predictor:
    try:
        return Predictor(experiments.PREDICTORS[name])
    except KeyError:
        raise ConfigError(f"predictor must be one of {sorted(experiments.PREDICTORS)}") from None


def cmd_compress(args) -> int:
    cfg = resolve(COMPRESS_SCHEMA, args.config, _overrides(
        COMPRESS_SCHEMA, args.set, eb=args.eb, predictor=args.predictor,
        quant_radius=args.quant_radius))
    if not cfg["eb"] > 0:
        raise ConfigError("compress needs a positive --eb")
    try:
        params = CodecParams(cfg["eb"], cfg["quant_radius"], _predictor(cfg["predictor"]))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    data = load_tensor(args.input)
    blob = compress(data, params)
    save_blob(args.out, blob)
    err = max_abs_diff(data, decompress(blob))
    print(f"ratio {compression_ratio(blob):.6g} max_error {err:.6g} "
          f"bytes {blob.compressed_bytes}/{blob.uncompressed_bytes}")
    return EXIT_OK


def cmd_decompress(args) -> int:
    cfg = resolve(DECOMPRESS_SCHEMA, args.config,
                  _overrides(DECOMPRESS_SCHEMA, args.set, filter=True if args.filter else None))
    blob = load_blob(args.input)
    out = decompress(blob, zero_filter=cfg["filter"])
    save_tensor(args.out, out)
    line = f"ratio {compression_ratio(blob):.6g}"
    if args.reference:
        ref = load_tensor(args.reference)
        line += f" max_error {max_abs_diff(ref, out):.6g}"
        zeros = ref == 0
        if zeros.any():
            line += f" zeros_preserved {int(np.count_nonzero(out[zeros] == 0))}/{int(zeros.sum())}"
    print(line)
    return EXIT_OK


def cmd_error_study(args) -> int:
    cfg = resolve(experiments.ERROR_STUDY_SCHEMA, args.config,
                  _overrides(experiments.ERROR_STUDY_SCHEMA, args.set, trials=args.trials))
    result = experiments.error_study(cfg, args.out, args.seed)
    for c in result["cases"]:
        print(f"{c['geometry']} N={c['N']} eb={c['eb']:g} R={c['R']:.3f} "
              f"sigma={c['empirical_sigma']:.4g} exact={c['exact_sigma']:.4g} "
              f"within1={c['within_one_sigma']:.4f}")
    print(f"fitted a {result['fitted_a']:.6g} (default {result['paper_default_a']})")
    return EXIT_OK


def cmd_fit_a(args) -> int:
    cfg = resolve(experiments.ERROR_STUDY_SCHEMA, args.config,
                  _overrides(experiments.ERROR_STUDY_SCHEMA, args.set, trials=args.trials))
    result = experiments.fit_a(cfg, args.out, args.seed, args.study)
    print(f"fitted a {result['fitted_a']:.6g} default a {result['paper_default_a']} "
          f"max fold error {result['max_fold_error']:.4g} "
          f"(L_max scale: a {result['fitted_a_using_L_max']:.6g})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve(experiments.TRAIN_SCHEMA, args.config,
                  _overrides(experiments.TRAIN_SCHEMA, args.set, epochs=args.epochs))
    s = experiments.train_pair(cfg, args.out, args.seed)
    t = s["timing"]
    print(f"baseline accuracy {s['baseline_accuracy']:.4f} compressed accuracy "
          f"{s['compressed_accuracy']:.4f} delta {s['accuracy_delta_pct_points']:+.2f} pp")
    print(f"mean conv ratio {s['mean_conv_compression_ratio']:.3f}")
    # wall time varies between runs, so it stays off stdout
    print(f"overhead {t['overhead_pct']:.1f}%", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lossyact", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", parents=[common], help="compress a TNSR tensor file")
    c.add_argument("input")
    c.add_argument("--out", required=True, help="output blob file")
    c.add_argument("--eb", type=float)
    c.add_argument("--predictor", choices=sorted(experiments.PREDICTORS))
    c.add_argument("--quant-radius", type=int)
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", parents=[common], help="decompress a blob to a TNSR file")
    d.add_argument("input")
    d.add_argument("--out", required=True, help="output tensor file")
    d.add_argument("--filter", action="store_true", help="zero elements within the error bound")
    d.add_argument("--reference", help="original tensor to report the error against")
    d.set_defaults(func=cmd_decompress)

    e = sub.add_parser("error-study", parents=[common], help="gradient error injection study")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--trials", type=int)
    e.set_defaults(func=cmd_error_study)

    f = sub.add_parser("fit-a", parents=[common], help="fit the sigma estimator coefficient")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--study", help="study.json from a previous error-study run")
    f.add_argument("--trials", type=int)
    f.set_defaults(func=cmd_fit_a)

    t = sub.add_parser("train", parents=[common], help="baseline vs compressed training")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DecodeError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
