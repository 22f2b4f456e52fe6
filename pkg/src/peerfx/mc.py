"""Monte Carlo replications of the estimators on the simulation design.

Each replication draws its data from streams keyed by (seed, replication), so
results do not depend on scheduling or on the number of worker processes.
Per-replication records are folded in replication order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dgp import DgpConfig, simulate
from .errors import McAbortError, OverparameterizationError, PeerfxError
from .estimators import ControlSpec, estimate, t_reject
from .fe_logit import FitOptions, dyad_features, fit_joint_mle
from .network import row_normalize
from .sieve import loo_cv_select

__all__ = ["McConfig", "McSummary", "run_replication", "run_mc", "summarize", "config_hash"]

MAX_FAILURE_SHARE = 0.10


@dataclass(frozen=True)
class McConfig:
    dgp: DgpConfig
    reps: int = 1000
    estimators: tuple = (ControlSpec("none"),)
    k_grid: tuple | None = None
    level: float = 0.05
    parallel: int = 1
    fit: FitOptions = field(default_factory=lambda: FitOptions(exclude_boundary=True))

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.parallel < 1:
            raise ValueError("parallel must be at least 1")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        labels = [e.label for e in self.estimators]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate estimator labels {labels}")
        if self.k_grid is not None:
            object.__setattr__(self, "k_grid", tuple(int(k) for k in self.k_grid))

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp.to_dict(),
            "reps": self.reps,
            "estimators": [_spec_dict(e) for e in self.estimators],
            "k_grid": None if self.k_grid is None else list(self.k_grid),
            "level": self.level,
            "parallel": self.parallel,
            "fit": {"tol": self.fit.tol, "max_sweeps": self.fit.max_sweeps,
                    "exclude_boundary": self.fit.exclude_boundary},
        }


def _spec_dict(spec: ControlSpec) -> dict:
    out = {"kind": spec.kind}
    if spec.basis is not None:
        out.update(family=spec.basis.family, k=spec.basis.k,
                   includes_intercept=spec.basis.includes_intercept)
    if not spec.drop_overlap:
        out["drop_overlap"] = False
    return out


def config_hash(cfg: McConfig) -> str:
    """SHA-256 of the canonical JSON form, excluding the worker count."""
    d = cfg.to_dict()
    d.pop("parallel")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _cv_points(spec, sample, fit):
    if spec.kind == "sieve_a_hat":
        keep = fit.retained
        return fit.a_hat[keep], sample.y[keep]
    deg = sample.network.degrees / (sample.n - 1)
    return np.column_stack([sample.x2, deg]), sample.y


def run_replication(cfg: McConfig, rep: int) -> list[dict]:
    """Simulate replication ``rep`` and run every estimator on it.

    Returns one record per estimator. A failure anywhere marks every record
    of the replication with ``status='failed'`` and the exception class as
    ``cause``.
    """
    base = {"rep": rep}
    try:
        sample = simulate(cfg.dgp, rep)
        base["mean_degree"] = float(sample.network.degrees.mean())
        weights = row_normalize(sample.network)
        fit = None
        if any(e.needs_fit for e in cfg.estimators):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = fit_joint_mle(sample.network, dyad_features(sample.x2[:, 0]), cfg.fit)
            if not fit.converged:
                raise PeerfxError("link model did not converge")
            base["n_excluded"] = int((~fit.retained).sum())
        h_values = cfg.dgp.h(sample.a)
        out = []
        for spec in cfg.estimators:
            res = estimate(sample, weights, spec, fit=fit, h_values=h_values)
            rec = dict(base, estimator=spec.label, status="ok", cause="")
            rec.update(_coef_fields(res, cfg))
            if cfg.k_grid is not None and spec.basis is not None:
                pts, target = _cv_points(spec, sample, fit)
                try:
                    rec["k_star"] = loo_cv_select(spec.basis.family, cfg.k_grid, pts, target,
                                                  spec.basis.includes_intercept).selected_k
                except OverparameterizationError:
                    # K* is reported only; every K interpolating leaves it blank
                    rec["k_star"] = None
            out.append(rec)
        return out
    except (PeerfxError, np.linalg.LinAlgError) as exc:
        base.setdefault("mean_degree", float("nan"))
        return [dict(base, estimator=spec.label, status="failed", cause=type(exc).__name__)
                for spec in cfg.estimators]


def _coef_fields(res, cfg):
    beta0 = cfg.dgp.beta
    rej = t_reject(res, beta0, cfg.level)
    out = {}
    for name, b, s, r in zip(beta0.names(), res.beta_hat.as_array(), res.se, rej):
        out[name] = float(b)
        out[f"se_{name}"] = float(s)
        out[f"reject_{name}"] = int(r)
    return out


@dataclass(frozen=True)
class McSummary:
    """Per (estimator, coefficient) mean bias, standard deviation and size.

    ``rows`` is a tuple of dicts with keys estimator, coefficient, mean_bias,
    std, size and n_ok. ``metadata`` carries failure counts, realized mean
    degree and, when CV ran, the modal selected K per sieve estimator.
    """

    rows: tuple
    metadata: dict

    def get(self, estimator: str, coefficient: str = "beta1") -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["coefficient"] == coefficient:
                return r
        raise KeyError((estimator, coefficient))

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = ["estimator", "coefficient", "mean_bias", "std", "size", "n_ok"]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for r in self.rows:
                writer.writerow([r["estimator"], r["coefficient"], repr(r["mean_bias"]),
                                 repr(r["std"]), repr(r["size"]), r["n_ok"]])
        return path


def summarize(records, beta0, estimators=None) -> McSummary:
    """Aggregate per-replication records.

    ``mean_bias`` is the mean of ``beta_hat - beta0``, ``std`` the sample
    standard deviation (0 for a single record) and ``size`` the share of
    ``reject_*`` flags. Failed records are counted but not aggregated.
    """
    records = sorted(records, key=lambda r: (r["rep"], r["estimator"]))
    if not records:
        raise ValueError("no records to summarize")
    if estimators is None:
        estimators = list(dict.fromkeys(r["estimator"] for r in records))
    names = beta0.names()
    truth = dict(zip(names, beta0.as_array()))
    rows = []
    k_star = {}
    for est in estimators:
        ok = [r for r in records if r["estimator"] == est and r["status"] == "ok"]
        for name in names:
            if ok:
                b = np.array([r[name] for r in ok])
                rej = np.array([r[f"reject_{name}"] for r in ok], dtype=float)
                bias = float(np.mean(b - truth[name]))
                std = float(np.std(b, ddof=1)) if b.size > 1 else 0.0
                size = float(np.mean(rej))
            else:
                bias = std = size = float("nan")
            rows.append({"estimator": est, "coefficient": name, "mean_bias": bias,
                         "std": std, "size": size, "n_ok": len(ok)})
        ks = [r["k_star"] for r in ok if r.get("k_star") is not None]
        if ks:
            counts = Counter(ks)
            k_star[est] = min(k for k, c in counts.items() if c == max(counts.values()))
    reps = sorted({r["rep"] for r in records})
    failed = sorted({r["rep"] for r in records if r["status"] != "ok"})
    causes = Counter(r["cause"] for r in records
                     if r["status"] != "ok" and r["estimator"] == estimators[0])
    degrees = [r["mean_degree"] for r in records
               if r["estimator"] == estimators[0] and np.isfinite(r.get("mean_degree", np.nan))]
    meta = {
        "reps": len(reps),
        "failures": len(failed),
        "successes": len(reps) - len(failed),
        "failure_causes": dict(sorted(causes.items())),
        "mean_degree": float(np.mean(degrees)) if degrees else float("nan"),
        "k_star": k_star,
    }
    return McSummary(tuple(rows), meta)


def _rep_chunk(args):
    cfg, reps = args
    return [rec for rep in reps for rec in run_replication(cfg, rep)]


def _collect(cfg):
    if cfg.parallel == 1:
        return _rep_chunk((cfg, range(cfg.reps)))
    chunks = [list(range(cfg.reps))[i::cfg.parallel] for i in range(cfg.parallel)]
    chunks = [c for c in chunks if c]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(_rep_chunk, [(cfg, c) for c in chunks]))
    return [rec for part in parts for rec in part]


RAW_FIXED = ["rep", "estimator", "status", "cause", "mean_degree", "n_excluded", "k_star"]


def write_raw(records, path, coef_names) -> Path:
    path = Path(path)
    cols = RAW_FIXED + [f"{p}{c}" for c in coef_names for p in ("", "se_", "reject_")]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in records:
            writer.writerow([_cell(r.get(c, "")) for c in cols])
    return path


def read_raw(path) -> list[dict]:
    """Parse ``raw_reps.csv`` back into records accepted by :func:`summarize`."""
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if k in ("estimator", "status", "cause"):
                    rec[k] = v
                elif v == "":
                    rec[k] = None
                elif k in ("rep", "n_excluded", "k_star") or k.startswith("reject_"):
                    rec[k] = int(v)
                else:
                    rec[k] = float(v)
            out.append(rec)
    return out


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def run_mc(cfg: McConfig, out_dir=None) -> McSummary:
    """Run all replications, dump raw records, then summarize.

    When ``out_dir`` is given, ``raw_reps.csv``, ``summary.csv`` and
    ``run_meta.json`` are written there. Raw records are written before the
    failure check so an aborted run can still be inspected.

    Raises
    ------
    McAbortError
        More than 10% of replications failed.
    """
    records = sorted(_collect(cfg), key=lambda r: (r["rep"], r["estimator"]))
    names = cfg.dgp.beta.names()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_raw(records, out / "raw_reps.csv", names)
    labels = [e.label for e in cfg.estimators]
    summary = summarize(records, cfg.dgp.beta, labels)
    meta = dict(summary.metadata, config_hash=config_hash(cfg), seed=cfg.dgp.seed,
                config=cfg.to_dict())
    summary = McSummary(summary.rows, meta)
    if out is not None:
        (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if meta["failures"] > MAX_FAILURE_SHARE * cfg.reps:
        raise McAbortError(
            f"{meta['failures']} of {cfg.reps} replications failed", meta["failure_causes"]
        )
    if out is not None:
        summary.to_csv(out / "summary.csv")
    return summary
