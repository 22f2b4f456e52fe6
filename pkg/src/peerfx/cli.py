"""``peerfx`` command line.

Subcommands::

    peerfx simulate    -c CFG -o DIR [--seed S] [--replication R]
    peerfx fit-network -i DIR -o DIR [--keep-boundary]
    peerfx estimate    -i DIR -o DIR --control KIND [--k K] [--family F] [--fit FILE] [-c CFG]
    peerfx montecarlo  -c CFG -o DIR [--seed S] [--reps R] [--parallel P]
    peerfx cv          -i DIR -o DIR --control KIND --k-grid 2..8 [--family F] [--fit FILE]

The data directory holds ``sample.csv`` and ``sample_edges.txt`` as written by
``simulate``. On failure the process prints a one-line JSON error record to
stderr and exits with the code from :data:`peerfx.errors.EXIT_CODES`.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import dump_config, load_config
from .dgp import Sample, simulate
from .errors import ConfigError, InputFileError, PeerfxError, PreconditionError
from .estimators import ControlSpec, estimate
from .fe_logit import FitOptions, LinkModelFit, dyad_features, fit_joint_mle
from .mc import config_hash, run_mc
from .network import row_normalize, scaled_degrees
from .sieve import SieveBasis, loo_cv_select

log = logging.getLogger("peerfx")

CONTROL_ALIASES = {
    "none": "none",
    "linear-a": "linear_a_hat",
    "sieve-a": "sieve_a_hat",
    "sieve-xdeg": "sieve_x2_deg",
    "oracle": "oracle_h",
}


def parse_k_grid(text: str) -> list[int]:
    """``"2..8"`` or ``"2,4,6"`` to a list of ints."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            grid = list(range(int(lo), int(hi) + 1))
        else:
            grid = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse k grid {text!r}") from None
    if not grid:
        raise ConfigError(f"empty k grid {text!r}")
    return grid


def _cols(text):
    return None if text is None else [c.strip() for c in text.split(",") if c.strip()]


def _load_sample(args) -> Sample:
    d = Path(args.input)
    return Sample.from_csv(d / "sample.csv", d / "sample_edges.txt",
                           _cols(getattr(args, "x1_cols", None)),
                           _cols(getattr(args, "x2_cols", None)))


def _load_fit(args, sample):
    path = args.fit
    if path is None:
        default = Path(args.input) / "fit.csv"
        path = default if default.exists() else None
    if path is None:
        return None
    path = Path(path)
    if not path.exists():
        raise InputFileError(f"fit file not found: {path}")
    return LinkModelFit.from_csv(path)


def _control(args) -> ControlSpec:
    kind = CONTROL_ALIASES[args.control]
    basis = SieveBasis(args.family, args.k) if kind in ("sieve_a_hat", "sieve_x2_deg") else None
    return ControlSpec(kind, basis, drop_overlap=not args.allow_overlap)


def _out(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    cfg = load_config(args.config, args.seed)
    out = _out(args)
    sample = simulate(cfg.dgp, args.replication)
    sample.to_csv(out)
    meta = {"config_hash": config_hash(cfg), "seed": cfg.dgp.seed,
            "replication": args.replication, "n": sample.n,
            "mean_degree": float(sample.network.degrees.mean())}
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out / "config.yaml").write_text(dump_config(cfg))
    log.info("wrote sample with n=%d, mean degree %.3f", sample.n, meta["mean_degree"])


def cmd_fit_network(args):
    sample = _load_sample(args)
    out = _out(args)
    opts = FitOptions(exclude_boundary=not args.keep_boundary)
    fit = fit_joint_mle(sample.network, dyad_features(sample.x2), opts)
    fit.to_csv(out / "fit.csv")
    log.info("lambda_hat=%s converged=%s excluded=%d", fit.lambda_hat, fit.converged,
             fit.excluded.size)
    if not fit.converged:
        raise PeerfxError("link model did not converge; diagnostics written to fit.json")


def cmd_estimate(args):
    sample = _load_sample(args)
    out = _out(args)
    ctrl = _control(args)
    fit = _load_fit(args, sample) if ctrl.needs_fit else None
    cfg = load_config(args.config) if args.config else None
    h_values = None
    if ctrl.kind == "oracle_h":
        if cfg is None or sample.a is None:
            raise PreconditionError("oracle control needs -c CFG and a sample carrying 'a'")
        h_values = cfg.dgp.h(sample.a)
    res = estimate(sample, row_normalize(sample.network), ctrl, fit=fit, h_values=h_values)
    beta0 = cfg.dgp.beta if cfg is not None and cfg.dgp.beta.p == sample.x1.shape[1] else None
    res.to_csv(out / "estimate.csv", beta0, args.level)
    log.info("%s: beta_hat=%s se=%s", ctrl.label, res.beta_hat.as_array(), res.se)


def cmd_montecarlo(args):
    cfg = load_config(args.config, args.seed)
    changes = {}
    if args.reps is not None:
        changes["reps"] = args.reps
    if args.parallel is not None:
        changes["parallel"] = args.parallel
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    out = _out(args)
    summary = run_mc(cfg, out)
    log.info("finished %d reps, %d failures", summary.metadata["reps"],
             summary.metadata["failures"])


def cmd_cv(args):
    sample = _load_sample(args)
    out = _out(args)
    kind = CONTROL_ALIASES[args.control]
    if kind == "sieve_a_hat":
        fit = _load_fit(args, sample)
        if fit is None:
            raise PreconditionError("cv on a_hat needs a link model fit (--fit)")
        keep = fit.retained
        points, target = fit.a_hat[keep], sample.y[keep]
    elif kind == "sieve_x2_deg":
        points = np.column_stack([sample.x2, scaled_degrees(sample.network)])
        target = sample.y
    else:
        raise ConfigError("cv needs --control sieve-a or sieve-xdeg")
    res = loo_cv_select(args.family, parse_k_grid(args.k_grid), points, target)
    res.to_csv(out / "cv.csv")
    log.info("selected K=%d", res.selected_k)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="peerfx", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"peerfx {__version__}")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw one sample from the design")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--replication", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    def data_args(q):
        q.add_argument("-i", "--input", required=True, help="directory with sample.csv")
        q.add_argument("-o", "--output", required=True)
        q.add_argument("--x1-cols", help="comma-separated x1 column names")
        q.add_argument("--x2-cols", help="comma-separated x2 column names")

    f = sub.add_parser("fit-network", help="fit the fixed-effect logit link model")
    data_args(f)
    f.add_argument("--keep-boundary", action="store_true",
                   help="fail instead of excluding nodes of degree 0 or n-1")
    f.set_defaults(func=cmd_fit_network)

    def control_args(q):
        q.add_argument("--control", required=True, choices=list(CONTROL_ALIASES))
        q.add_argument("--family", default="hermite", choices=["hermite", "polynomial"])
        q.add_argument("--fit", help="fit.csv from fit-network (default: INPUT/fit.csv)")

    e = sub.add_parser("estimate", help="run one 2SLS estimator")
    data_args(e)
    control_args(e)
    e.add_argument("--k", type=int, default=3)
    e.add_argument("-c", "--config", help="config with the true beta for rejections")
    e.add_argument("--level", type=float, default=0.05)
    e.add_argument("--allow-overlap", action="store_true",
                   help="skip the x1/x2 overlap check for sieve-xdeg")
    e.set_defaults(func=cmd_estimate)

    m = sub.add_parser("montecarlo", help="run the Monte Carlo study")
    m.add_argument("-c", "--config", required=True)
    m.add_argument("-o", "--output", required=True)
    m.add_argument("--seed", type=int)
    m.add_argument("--reps", type=int)
    m.add_argument("--parallel", type=int)
    m.set_defaults(func=cmd_montecarlo)

    v = sub.add_parser("cv", help="leave-one-out choice of the sieve order")
    data_args(v)
    control_args(v)
    v.add_argument("--k-grid", default="2..8")
    v.set_defaults(func=cmd_cv)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except PeerfxError as exc:
        err = {"error": type(exc).__name__, "code": exc.exit_code, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
