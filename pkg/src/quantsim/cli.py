"""Command-line front end.

Subcommands map one-to-one onto pipeline stages:

    quantsim gen-data        --out run [--seed S] [gen/model knobs]
    quantsim dilate          --out run [--scaler wd|smoothquant|none]
    quantsim calibrate       --out run [--bits-w B] [--bits-a B]
    quantsim train-bkd       --out run [--iters N] [training knobs]
    quantsim analyze         --out run [--state auto|calib|trained]
    quantsim compare-scalers --out run

Options can also come from a JSON config file (--config) holding
{"experiment": {...}, "gen": {...}}; explicit flags win over the file.

Exit codes: 0 success, 1 validation failure, 2 I/O or format failure,
3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import json
import sys

from .distill import NumericalError
from .pipeline import ExperimentConfig, SCALERS, stage_analyze, stage_calibrate, stage_dilate, stage_gen, stage_train, compare_scalers
from .synth import GenConfig
from .tensorops import TnsError

__all__ = ["main"]


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; that slot is reserved for
    # I/O failures here, so route usage problems through the normal mapping
    def error(self, message):
        raise _UsageError(message)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = set(doc) - {"experiment", "gen"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _make(cls, doc: dict, what: str):
    try:
        return cls(**doc)
    except TypeError as e:
        raise ValueError(f"bad {what} config: {e}") from None


_EXP_FLAGS = (
    "bits_w",
    "bits_a",
    "scaler",
    "alpha",
    "calibration",
    "iters",
    "batch_size",
    "lr_qparams",
    "lr_weights",
    "input_source",
    "seed",
)


def _experiment_config(args) -> ExperimentConfig:
    doc = dict(_load_config(args.config).get("experiment", {}))
    for name in _EXP_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            doc[name] = value
    if getattr(args, "no_figures", False):
        doc["figures"] = False
    if getattr(args, "sq_unfloored", False):
        doc["sq_floor"] = False
    cfg = _make(ExperimentConfig, doc, "experiment")
    return cfg


def _gen_config(args) -> GenConfig:
    doc = dict(_load_config(args.config).get("gen", {}))
    for name in ("T", "N", "C", "sigma_base", "gamma", "outlier_prob", "outlier_scale", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            doc[name] = value
    return _make(GenConfig, doc, "gen")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int)


def _add_experiment(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bits-w", dest="bits_w", type=int, help="weight bit-width")
    p.add_argument("--bits-a", dest="bits_a", type=int, help="activation bit-width")
    p.add_argument("--scaler", choices=SCALERS)
    p.add_argument("--alpha", type=float, help="smoothquant migration exponent")
    p.add_argument("--calibration", choices=("mse", "maxmin"))
    p.add_argument("--iters", type=int, help="distillation steps per block")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quantsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the dataset and toy model")
    _add_common(p)
    p.add_argument("--T", type=int, help="number of timesteps")
    p.add_argument("--N", type=int, help="rows per timestep")
    p.add_argument("--C", type=int, help="channels")
    p.add_argument("--sigma-base", dest="sigma_base", type=float)
    p.add_argument("--gamma", type=float, help="timestep range growth")
    p.add_argument("--outlier-prob", dest="outlier_prob", type=float)
    p.add_argument("--outlier-scale", dest="outlier_scale", type=float)
    p.add_argument("--blocks", type=int, help="model blocks")
    p.add_argument("--layers-per-block", dest="layers_per_block", type=int)
    p.add_argument("--width", type=int, help="model hidden width")

    p = sub.add_parser("dilate", help="compute and bake per-layer scaling")
    _add_common(p)
    _add_experiment(p)
    p.add_argument("--sq-unfloored", action="store_true", help="allow smoothquant scales below 1")

    p = sub.add_parser("calibrate", help="initialize quantizer parameters")
    _add_common(p)
    _add_experiment(p)

    p = sub.add_parser("train-bkd", help="block-wise distillation training")
    _add_common(p)
    _add_experiment(p)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-qparams", dest="lr_qparams", type=float)
    p.add_argument("--lr-weights", dest="lr_weights", type=float)
    p.add_argument("--input-source", dest="input_source", choices=("quantized", "fp"))

    p = sub.add_parser("analyze", help="write error and effect reports")
    _add_common(p)
    _add_experiment(p)
    p.add_argument("--state", choices=("auto", "calib", "trained"), default="auto")

    p = sub.add_parser("compare-scalers", help="run all scaling arms on shared inputs")
    _add_common(p)
    _add_experiment(p)
    p.add_argument("--sq-unfloored", action="store_true", help="allow smoothquant scales below 1")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-qparams", dest="lr_qparams", type=float)
    p.add_argument("--lr-weights", dest="lr_weights", type=float)
    p.add_argument("--input-source", dest="input_source", choices=("quantized", "fp"))

    return parser


def _dispatch(args) -> None:
    if args.command == "gen-data":
        gen_cfg = _gen_config(args)
        spec_kw = {}
        for name in ("blocks", "layers_per_block", "width"):
            value = getattr(args, name, None)
            if value is not None:
                spec_kw[name] = value
        stage_gen(args.out, gen_cfg, spec_kw)
        print(f"wrote {args.out}/data and {args.out}/model (T={gen_cfg.T}, N={gen_cfg.N}, C={gen_cfg.C})")
        return

    cfg = _experiment_config(args)
    if args.command == "dilate":
        stage_dilate(args.out, cfg)
        print(f"wrote {args.out}/scaled (scaler={cfg.scaler})")
    elif args.command == "calibrate":
        stage_calibrate(args.out, cfg)
        print(f"wrote {args.out}/calib (bits_w={cfg.bits_w}, bits_a={cfg.bits_a}, {cfg.calibration})")
    elif args.command == "train-bkd":
        result = stage_train(args.out, cfg)
        print(f"wrote {args.out}/trained ({cfg.iters} steps/block)")
        for b, (pre, post) in enumerate(zip(result.pre_mse, result.post_mse), start=1):
            print(f"block {b}: mse {pre:.6g} -> {post:.6g}")
    elif args.command == "analyze":
        reports = stage_analyze(args.out, cfg, state=args.state)
        print(f"wrote {args.out}/reports")
        for r in reports:
            print(f"{r.layer}: total_error {r.total_error:.6g} <= bound {r.bound_rhs:.6g}")
    elif args.command == "compare-scalers":
        results = compare_scalers(args.out, cfg)
        print(f"wrote {args.out}/compare.csv")
        for arm in SCALERS:
            total = sum(r.total_error for r in results[arm]["calib_reports"])
            print(f"{arm}: summed layer error {total:.6g}")
    else:  # pragma: no cover - argparse enforces the choices
        raise _UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _dispatch(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (TnsError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
