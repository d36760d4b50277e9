"""Command-line interface: ``flarebo enhance | batch | metrics | niqe-train``.

Results go to stdout as JSON carrying a ``schema`` field; diagnostics go to
stderr. Settings resolve as flag > config file > built-in default. The
config file is TOML (``--config PATH`` or the ``FLAREBO_CONFIG`` environment
variable)::

    [bo]
    n_init = 16
    n_total = 50
    acquisition_restarts = 8
    seed = 0
    baseline_mode = false
    raw_samples = 256
    kernel = "se"            # or "matern52"

    [bounds]
    alpha = [0.5, 5.0]       # any of alpha beta gamma h sigma_s lambda d h_c

    [niqe]
    model = "path/to/model.json"
    patch_size = 96
    threshold = 0.75

    [batch]
    workers = 1

Exit codes: 0 success, 1 I/O error, 2 configuration or input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .harness import DatasetError, load_paired, run_batch
from .imagecore import ImageSpaceError, read_png, write_png
from .metrics import psnr, ssim
from .niqe import DEFAULT_PATCH_SIZE, DEFAULT_SHARPNESS_THRESHOLD, NiqeError, NiqeModel, niqe_score, niqe_train_with_summary
from .optimizer import BoConfig, ConfigError, optimise_image
from .params import DEFAULT_BOUNDS, PARAM_NAMES, ParamBounds, ParameterBoundsError

log = logging.getLogger("flarebo")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_ENV = "FLAREBO_CONFIG"
SCHEMA_VERSION = 1

# names as they appear on the command line and in TOML ("lambda" for ``lam``)
_BOUND_KEYS = {("lambda" if n == "lam" else n): n for n in PARAM_NAMES}
_BO_DEFAULTS = {f.name: f.default for f in fields(BoConfig)}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _schema(command):
    return f"flarebo.{command}/{SCHEMA_VERSION}"


def _emit(doc: dict):
    json.dump(doc, sys.stdout, indent=2, sort_keys=False)
    sys.stdout.write("\n")


# --- configuration ---------------------------------------------------------------


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {path}", EXIT_IO) from exc
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"invalid TOML in {path}: {exc}", EXIT_CONFIG) from exc


def _file_config(args) -> dict:
    path = args.config or os.environ.get(CONFIG_ENV)
    return load_config_file(path) if path else {}


def _pick(flag, section: dict, key, default):
    if flag is not None:
        return flag
    return section.get(key, default)


def resolve_bo_config(args, cfg: dict) -> BoConfig:
    bo = cfg.get("bo", {})
    unknown = set(bo) - set(_BO_DEFAULTS)
    if unknown:
        raise CliError(f"unknown [bo] keys: {sorted(unknown)}", EXIT_CONFIG)
    values = {k: bo.get(k, d) for k, d in _BO_DEFAULTS.items()}
    overrides = {
        "n_init": getattr(args, "n_init", None),
        "n_total": getattr(args, "budget", None),
        "acquisition_restarts": getattr(args, "restarts", None),
        "seed": getattr(args, "seed", None),
        "raw_samples": getattr(args, "raw_samples", None),
        "kernel": getattr(args, "kernel", None),
        "baseline_mode": True if getattr(args, "baseline", False) else None,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return BoConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid [bo] settings: {exc}", EXIT_CONFIG) from exc


def resolve_bounds(args, cfg: dict) -> ParamBounds:
    section = cfg.get("bounds", {})
    unknown = set(section) - set(_BOUND_KEYS)
    if unknown:
        raise CliError(f"unknown [bounds] keys: {sorted(unknown)}", EXIT_CONFIG)
    merged = {}
    for key, name in _BOUND_KEYS.items():
        pair = getattr(args, f"bounds_{name}", None) or section.get(key) or DEFAULT_BOUNDS[name]
        if len(pair) != 2:
            raise CliError(f"bounds for {key} need two numbers, got {pair}", EXIT_CONFIG)
        merged[name] = (float(pair[0]), float(pair[1]))
    try:
        return ParamBounds.from_dict(merged)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


def resolve_niqe_model(args, cfg: dict):
    path = _pick(getattr(args, "niqe_model", None), cfg.get("niqe", {}), "model", None)
    if path is None:
        return None, None
    try:
        return NiqeModel.load(path), str(path)
    except FileNotFoundError as exc:
        raise CliError(f"NIQE model not found: {path}", EXIT_IO) from exc


def _echo(bo: BoConfig, bounds: ParamBounds, niqe_path) -> dict:
    bounds_echo = {("lambda" if k == "lam" else k): list(v) for k, v in bounds.as_dict().items()}
    return {"bo": bo.as_dict(), "bounds": bounds_echo, "niqe_model": niqe_path or "shipped"}


def _read(path):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"cannot read {path}: no such file", EXIT_IO)
    try:
        return read_png(path)
    except OSError as exc:
        raise CliError(f"cannot decode {path}: {exc}", EXIT_IO) from exc


# --- commands --------------------------------------------------------------------


def cmd_enhance(args) -> int:
    cfg = _file_config(args)
    bo = resolve_bo_config(args, cfg)
    bounds = resolve_bounds(args, cfg)
    model, model_path = resolve_niqe_model(args, cfg)
    low, ref = _read(args.low), _read(args.ref)
    res = optimise_image(low, ref, model, bo, bounds)
    write_png(res.image, args.out)
    if args.trace:
        res.write_trace(args.trace)
    log.info("enhanced %s in %.1f s", args.low, res.seconds)
    theta = {("lambda" if k == "lam" else k): v for k, v in res.theta.as_dict().items()}
    _emit({
        "schema": _schema("enhance"),
        "out": str(args.out),
        "report": res.report.as_dict(),
        "theta": theta,
        "config": _echo(bo, bounds, model_path),
        "version": __version__,
    })
    return EXIT_OK


def cmd_batch(args) -> int:
    cfg = _file_config(args)
    bo = resolve_bo_config(args, cfg)
    bounds = resolve_bounds(args, cfg)
    model, model_path = resolve_niqe_model(args, cfg)
    workers = int(_pick(args.workers, cfg.get("batch", {}), "workers", 1))
    if workers < 1:
        raise CliError("--workers must be >= 1", EXIT_CONFIG)
    dataset = load_paired(args.dataset)
    echo = _echo(bo, bounds, model_path)
    echo["dataset"] = {"pairs": len(dataset), "skipped": list(dataset.skipped)}
    report = run_batch(dataset, bo, model, workers, out_dir=args.out, bounds=bounds, config_echo=echo)
    out = Path(args.out)
    _emit({
        "schema": _schema("batch"),
        "report_csv": str(out / "report.csv"),
        "aggregate_json": str(out / "aggregate.json"),
        **{k: v for k, v in report.aggregate().items() if k != "config"},
    })
    return EXIT_OK


def cmd_metrics(args) -> int:
    cfg = _file_config(args)
    a, b = _read(args.a), _read(args.b)
    if a.shape != b.shape:
        raise CliError(f"image sizes differ: {a.shape} vs {b.shape}", EXIT_CONFIG)
    doc = {"schema": _schema("metrics"), "psnr": psnr(a, b), "ssim": ssim(a, b)}
    model, _ = resolve_niqe_model(args, cfg)
    if model is not None:
        doc["niqe"] = niqe_score(a, model)
    _emit(doc)
    return EXIT_OK


def cmd_niqe_train(args) -> int:
    cfg = _file_config(args).get("niqe", {})
    patch = int(_pick(args.patch, cfg, "patch_size", DEFAULT_PATCH_SIZE))
    threshold = float(_pick(args.threshold, cfg, "threshold", DEFAULT_SHARPNESS_THRESHOLD))
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise CliError(f"corpus directory {corpus} does not exist", EXIT_IO)
    files = sorted(p for p in corpus.iterdir() if p.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"})
    images = [_read(p) for p in files]
    summary = niqe_train_with_summary(images, patch, threshold)
    summary.model.save(args.out)
    _emit({
        "schema": _schema("niqe-train"),
        "out": str(args.out),
        "images": len(images),
        "patches": summary.n_patches,
        "loo_median": summary.loo_median,
    })
    return EXIT_OK


# --- parser -------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", metavar="PATH", default=None,
                   help=f"TOML config file (default: ${CONFIG_ENV} if set, else none)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")


def _add_niqe_model(p):
    p.add_argument("--niqe-model", metavar="PATH", default=None,
                   help="NIQE model JSON (default: the model shipped with the package)")


def _add_search(p, budget_flag=True):
    d = _BO_DEFAULTS
    p.add_argument("--seed", type=int, default=None, help=f"base random seed (default: {d['seed']})")
    p.add_argument("--budget", type=int, default=None, metavar="N",
                   help=f"total evaluations per image, n_total (default: {d['n_total']})")
    p.add_argument("--n-init", type=int, default=None, metavar="N",
                   help=f"Sobol initial evaluations (default: {d['n_init']})")
    p.add_argument("--restarts", type=int, default=None, metavar="N",
                   help=f"acquisition restarts (default: {d['acquisition_restarts']})")
    p.add_argument("--raw-samples", type=int, default=None, metavar="N",
                   help=f"Sobol raw samples scored before restarts (default: {d['raw_samples']})")
    p.add_argument("--kernel", choices=("se", "matern52"), default=None,
                   help=f"GP kernel (default: {d['kernel']})")
    p.add_argument("--baseline", action="store_true", default=None,
                   help="search only alpha, beta, h with the rest pinned (default: off)")
    for key, name in _BOUND_KEYS.items():
        lo, hi = DEFAULT_BOUNDS[name]
        p.add_argument(f"--bounds-{key.replace('_', '-')}", dest=f"bounds_{name}", nargs=2, type=float,
                       metavar=("LO", "HI"), default=None, help=f"search range of {key} (default: {lo} {hi})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flarebo", description="Per-image Bayesian-optimised low-light enhancement.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="optimise and enhance one low/reference pair")
    p.add_argument("--low", required=True, metavar="PATH", help="low-light input image")
    p.add_argument("--ref", required=True, metavar="PATH", help="reference (normal-light) image")
    p.add_argument("--out", required=True, metavar="PATH", help="where to write the enhanced PNG")
    p.add_argument("--trace", metavar="PATH", default=None, help="write the evaluation trace as JSON lines (default: none)")
    _add_search(p)
    _add_niqe_model(p)
    _add_common(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("batch", help="run every pair of a low/ high/ dataset")
    p.add_argument("--dataset", required=True, metavar="ROOT", help="directory holding low/ and high/")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--workers", type=int, default=None, metavar="N", help="worker processes (default: 1)")
    _add_search(p)
    _add_niqe_model(p)
    _add_common(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("metrics", help="PSNR and SSIM of A against B, NIQE of A if a model is given")
    p.add_argument("--a", required=True, metavar="PATH", help="image under test")
    p.add_argument("--b", required=True, metavar="PATH", help="reference image")
    p.add_argument("--niqe-model", metavar="PATH", default=None, help="NIQE model JSON (default: NIQE not computed)")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("niqe-train", help="train a NIQE pristine model from a directory of images")
    p.add_argument("--corpus", required=True, metavar="DIR", help="directory of pristine images")
    p.add_argument("--out", required=True, metavar="PATH", help="model JSON to write")
    p.add_argument("--patch", type=int, default=None, help=f"patch size in pixels (default: {DEFAULT_PATCH_SIZE})")
    p.add_argument("--threshold", type=float, default=None,
                   help=f"sharpness threshold as a fraction of the sharpest patch (default: {DEFAULT_SHARPNESS_THRESHOLD})")
    _add_common(p)
    p.set_defaults(func=cmd_niqe_train)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DatasetError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ParameterBoundsError, ImageSpaceError, NiqeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
