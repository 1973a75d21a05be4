"""``vbayes`` command line: gen, fit-gmm, fit-bss, predict.

Exit codes: 0 success, 1 compute failure, 2 usage or input error.
Log verbosity comes from the VBAYES_LOG_LEVEL environment variable
(default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datagen, files, vbbss, vbgmm
from .ensemble import (
    ModelCollapseError,
    NonMonotoneError,
    RefitConfig,
    StructurePosterior,
    map_structure,
    predictive_log_density,
)
from .files import InputError

log = logging.getLogger("vbayes")

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2
COMPUTE_ERRORS = (
    ModelCollapseError,
    NonMonotoneError,
    vbbss.SourceSolveError,
    np.linalg.LinAlgError,
    FloatingPointError,
    ZeroDivisionError,
    RuntimeError,
)


@dataclass
class RunConfig:
    """Everything one command needs, validated before any compute."""

    command: str
    inputs: list[Path] = field(default_factory=list)
    out: Path | None = None
    seed: int | None = None
    engine: dict = field(default_factory=dict)

    def check_inputs(self):
        for p in self.inputs:
            if not p.is_file():
                raise InputError(f"no such file: {p}")
        if self.out is not None and self.out.exists() and not self.out.is_dir():
            raise InputError(f"output path {self.out} exists and is not a directory")


def _setup_logging():
    level = os.environ.get("VBAYES_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _engine_values(args, cls) -> dict:
    """Config file first, then command-line overrides."""
    values = {}
    if args.config is not None:
        values = files.read_keyvalue(args.config, files.config_fields(cls))
    for key in ("tol", "max_iter", "seed", "alpha_mode"):
        v = getattr(args, key, None)
        if v is not None and key in files.config_fields(cls):
            values[key] = v
    if getattr(args, "lambda_update", False):
        values["lambda_update"] = True
    if isinstance(values.get("noise_precision"), list):
        values["noise_precision"] = tuple(values["noise_precision"])
    return values


def _write_sweep(out: Path, sp: StructurePosterior, fits) -> None:
    rows = []
    for e in sp.entries:
        f = fits[e.m]
        rows.append((e.m, e.free_energy, e.log_prior, e.log_posterior, e.probability,
                     f.n_iter, int(f.converged)))
    files.write_csv(out / "qm.csv",
                    ["m", "free_energy", "log_prior", "log_posterior", "probability",
                     "iterations", "converged"], rows)
    for m, f in fits.items():
        files.write_csv(out / f"trace_m{m}.csv", ["iteration", "free_energy"],
                        enumerate(f.report.trace, start=1))


def _report_unconverged(fits):
    for m, f in sorted(fits.items()):
        if not f.converged:
            log.warning("m=%d stopped at the iteration limit (%d)", m, f.n_iter)


# --------------------------------------------------------------------------
# commands


GEN_KEYS = files.config_fields(datagen.GeneratorSpec)


def cmd_gen(args) -> int:
    rc = RunConfig("gen", [Path(args.spec)], None, args.seed)
    rc.check_inputs()
    values = files.read_keyvalue(args.spec, GEN_KEYS)
    if "kind" not in values:
        raise InputError(f"{args.spec}: missing key 'kind'")
    if args.seed is not None:
        values["seed"] = args.seed
    if values["kind"] == "gmm" and not {"weights", "means", "covs"} & values.keys():
        base = datagen.fig1_mixture_spec()
        values.update(weights=base.weights, means=base.means, covs=base.covs)
    spec = files.build(datagen.GeneratorSpec, values, args.spec)
    ds = datagen.generate(spec)
    files.write_matrix(args.output, ds.data, "y")
    if args.truth is not None:
        if ds.labels is not None:
            files.write_csv(args.truth, ["label"], ds.labels[:, None])
        elif ds.sources is not None:
            files.write_matrix(args.truth, ds.sources, "x")
        else:
            log.warning("spiral data has no ground truth; %s not written", args.truth)
    return EXIT_OK


def _prepare_fit(args, cls, command):
    rc = RunConfig(command, [Path(args.data)], Path(args.out_dir), args.seed)
    if getattr(args, "truth", None):
        rc.inputs.append(Path(args.truth))
    if args.config is not None:
        rc.inputs.append(Path(args.config))
    rc.check_inputs()
    if args.max_structures < 1:
        raise InputError("--max-structures must be at least 1")
    rc.engine = _engine_values(args, cls)
    cfg = files.build(cls, rc.engine)
    _, Y = files.read_csv(args.data)
    if Y.shape[0] == 0:
        raise InputError(f"{args.data}: no data rows")
    rc.out.mkdir(parents=True, exist_ok=True)
    return rc, cfg, Y


def cmd_fit_gmm(args) -> int:
    rc, cfg, Y = _prepare_fit(args, vbgmm.GmmConfig, "fit-gmm")
    K = min(args.max_structures, Y.shape[0])
    sweep = vbgmm.fit_all(Y, K, cfg)
    _write_sweep(rc.out, sweep.posterior, sweep.fits)
    _report_unconverged(sweep.fits)
    m = map_structure(sweep.posterior)
    best = sweep.fits[m]
    files.save_model(rc.out / "model.json", best)
    files.write_csv(rc.out / "labels.csv", ["label"],
                    np.argmax(best.resp, axis=1)[:, None])
    print(f"m={m}")
    return EXIT_OK


def _log_error(estimate, truth) -> float:
    err = vbbss.reconstruction_error(estimate, truth)
    return math.log10(err) if err > 0 else -math.inf


def cmd_fit_bss(args) -> int:
    rc, cfg, Y = _prepare_fit(args, vbbss.BssConfig, "fit-bss")
    truth = None
    if args.truth:
        _, truth = files.read_csv(args.truth)
        if truth.shape[0] != Y.shape[0]:
            raise InputError("truth and data differ in row count")
    snrs = None
    if args.snr_sweep is not None:
        if truth is None:
            raise InputError("--snr-sweep needs --truth")
        try:
            snrs = [float(s) for s in args.snr_sweep.split(",") if s.strip()]
        except ValueError:
            raise InputError(f"bad --snr-sweep list {args.snr_sweep!r}") from None
        if not snrs or not all(math.isfinite(s) for s in snrs):
            raise InputError("--snr-sweep needs finite SNR values")
    K = min(args.max_structures, Y.shape[0])
    sweep = vbbss.fit_all(Y, K, cfg)
    _write_sweep(rc.out, sweep.posterior, sweep.fits)
    _report_unconverged(sweep.fits)
    m = map_structure(sweep.posterior)
    best = sweep.fits[m]
    files.save_model(rc.out / "model.json", best)
    files.write_matrix(rc.out / "sources.csv", best.reconstruct(), "x")
    if truth is not None:
        files.write_csv(rc.out / "error.csv", ["m", "relative_error", "log10_error"],
                        [(m, vbbss.reconstruction_error(best.reconstruct(), truth),
                          _log_error(best.reconstruct(), truth))])
    if snrs is not None:
        # remix the true sources at each SNR and refit with the chosen m
        seed = 0 if args.seed is None else args.seed
        rows = []
        for snr in snrs:
            ds, _, _ = datagen.mix_sources(truth, Y.shape[1], snr, seed)
            f = vbbss.fit(ds.data, m, cfg)
            rows.append((snr, _log_error(f.reconstruct(), truth)))
        files.write_csv(rc.out / "snr_sweep.csv", ["snr_db", "log10_error"], rows)
    print(f"m={m}")
    return EXIT_OK


def cmd_predict(args) -> int:
    rc = RunConfig("predict", [Path(args.model), Path(args.query)])
    rc.check_inputs()
    fitted = files.load_model(args.model)
    _, Q = files.read_csv(args.query)
    d = fitted.data.shape[1]
    if Q.shape[0] and Q.shape[1] != d:
        raise InputError(f"query has {Q.shape[1]} columns, model expects {d}")
    rcfg = RefitConfig(
        max_iter=200 if args.max_iter is None else args.max_iter,
        tol=1e-8 if args.tol is None else args.tol,
        fast=args.fast,
    )
    rows = [(predictive_log_density(fitted, q, rcfg),) for q in Q]
    files.write_csv(args.output, ["log_density"], rows)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vbayes", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset from a spec file")
    g.add_argument("spec", help="key = value generator spec (kind = gmm | spiral | bss-mix)")
    g.add_argument("-o", "--output", required=True, help="output CSV")
    g.add_argument("--truth", help="also write labels or true sources here")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    def fit_args(sp):
        sp.add_argument("data", help="input CSV with a header row")
        sp.add_argument("-o", "--out-dir", required=True, help="report directory")
        sp.add_argument("-K", "--max-structures", type=int, default=10)
        sp.add_argument("--config", help="key = value engine config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iter", type=int)

    f = sub.add_parser("fit-gmm", help="VB mixture sweep over m = 1..K")
    fit_args(f)
    f.set_defaults(func=cmd_fit_gmm)

    b = sub.add_parser("fit-bss", help="VB source separation sweep over m = 1..K")
    fit_args(b)
    b.add_argument("--truth", help="CSV of true sources for the aligned error")
    b.add_argument("--snr-sweep", metavar="DB,DB,...",
                   help="remix the true sources at these SNRs and report the error")
    b.add_argument("--lambda-update", action="store_true",
                   help="learn the noise precisions")
    b.add_argument("--alpha-mode", choices=("printed", "stationary"))
    b.set_defaults(func=cmd_fit_bss)

    q = sub.add_parser("predict", help="log predictive density of query rows")
    q.add_argument("model", help="model.json written by a fit command")
    q.add_argument("query", help="query CSV with a header row")
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--fast", action="store_true",
                   help="skip the augmented refit and use the plug-in density")
    q.add_argument("--tol", type=float)
    q.add_argument("--max-iter", type=int)
    q.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    # LinAlgError is a ValueError, so compute failures are matched first
    except COMPUTE_ERRORS as exc:
        print(f"vbayes {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (InputError, OSError, ValueError) as exc:
        print(f"vbayes {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
