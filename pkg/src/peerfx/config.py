"""YAML run configuration.

A file mirrors :class:`~peerfx.mc.McConfig` field names: a ``dgp`` mapping
with :class:`~peerfx.dgp.DgpConfig` fields (``lambda``, ``beta1``..``beta3``
spelled out), ``reps``, ``estimators``, ``k_grid``, ``level``, ``parallel`` and
an optional ``fit`` mapping. Unknown keys anywhere are errors.

Example::

    dgp:
      n: 100
      beta1: 0.2
      target_mean_degree: 1.9
      seed: 7
    reps: 1000
    estimators:
      - kind: none
      - {kind: sieve_x2_deg, family: hermite, k: 3}
"""
from __future__ import annotations

from pathlib import Path

import yaml

from .dgp import DgpConfig
from .errors import ConfigError, InputFileError
from .estimators import ControlSpec
from .fe_logit import FitOptions
from .mc import McConfig
from .sieve import SieveBasis

__all__ = ["load_config", "parse_config", "parse_estimator", "dump_config"]

TOP_KEYS = {"dgp", "reps", "estimators", "k_grid", "level", "parallel", "fit"}
EST_KEYS = {"kind", "family", "k", "includes_intercept", "drop_overlap"}
FIT_KEYS = {"tol", "max_sweeps", "exclude_boundary", "damping", "inner_tol"}


def _unknown(raw, allowed, where):
    extra = sorted(set(raw) - allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {extra}")


def parse_estimator(raw) -> ControlSpec:
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError(f"estimator entry needs a 'kind': {raw!r}")
    _unknown(raw, EST_KEYS, "estimator")
    basis = None
    if "k" in raw or "family" in raw:
        basis = SieveBasis(raw.get("family", "hermite"), raw.get("k", 3),
                           raw.get("includes_intercept", True))
    try:
        return ControlSpec(raw["kind"], basis, raw.get("drop_overlap", True))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(raw: dict, seed: int | None = None) -> McConfig:
    """Validate a parsed mapping and build the run configuration."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _unknown(raw, TOP_KEYS, "config")
    dgp_raw = dict(raw.get("dgp") or {})
    if seed is not None:
        dgp_raw["seed"] = int(seed)
    fit_raw = dict(raw.get("fit") or {})
    _unknown(fit_raw, FIT_KEYS, "fit")
    fit_raw.setdefault("exclude_boundary", True)
    try:
        dgp = DgpConfig.from_dict(dgp_raw)
        ests = tuple(parse_estimator(e) for e in raw.get("estimators", ["none"]))
        return McConfig(
            dgp=dgp,
            reps=int(raw.get("reps", 1000)),
            estimators=ests,
            k_grid=raw.get("k_grid"),
            level=float(raw.get("level", 0.05)),
            parallel=int(raw.get("parallel", 1)),
            fit=FitOptions(**fit_raw),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, seed: int | None = None) -> McConfig:
    path = Path(path)
    if not path.exists():
        raise InputFileError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, seed)


def dump_config(cfg: McConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
