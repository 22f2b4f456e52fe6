"""Two-stage least squares for the linear-in-means model, with control functions.

Every estimator runs 2SLS of y on ``W = [Gy, X1, G X1]`` with instruments
``Z = [X1, G X1, G^2 X1]`` after y, W and Z have all been residualized on the
same control design:

========================  ===============================================
kind                      control design
========================  ===============================================
``none``                  nothing (plain 2SLS)
``linear_a_hat``          ``[1, a_hat]``
``sieve_a_hat``           sieve basis in ``a_hat``
``sieve_x2_deg``          sieve in scaled degree interacted with x2 levels
``oracle_h``              ``[1, h(a)]`` with the true a (simulation only)
========================  ===============================================
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .dgp import Sample
from .errors import IdentificationError, PreconditionError, RankError
from .fe_logit import LinkModelFit
from .network import CoefVector, PeerWeights, peer_aggregate, scaled_degrees
from .sieve import SieveBasis, control_design, residualize

__all__ = [
    "CONTROL_KINDS",
    "ControlSpec",
    "InstrumentSet",
    "EstimateResult",
    "build_wz",
    "two_sls",
    "robust_variance",
    "estimate",
    "t_reject",
    "overlapping_columns",
]

CONTROL_KINDS = ("none", "linear_a_hat", "sieve_a_hat", "sieve_x2_deg", "oracle_h")
SIEVE_KINDS = ("sieve_a_hat", "sieve_x2_deg")
NEEDS_FIT = ("linear_a_hat", "sieve_a_hat")
COND_WARN = 1e10
COND_FAIL = 1e12


@dataclass(frozen=True)
class ControlSpec:
    """Which control function to use.

    ``drop_overlap`` makes ``sieve_x2_deg`` check up front that no x1 column
    duplicates an x2 column. Turning it off skips the check, and the
    overlap then shows up as a rank failure of the residualized moments.
    """

    kind: str = "none"
    basis: SieveBasis | None = None
    drop_overlap: bool = True

    def __post_init__(self):
        if self.kind not in CONTROL_KINDS:
            raise ValueError(f"kind must be one of {CONTROL_KINDS}, got {self.kind!r}")
        if (self.basis is not None) != (self.kind in SIEVE_KINDS):
            raise ValueError(f"a sieve basis is required for, and only for, {SIEVE_KINDS}")

    @property
    def label(self) -> str:
        if self.basis is None:
            return self.kind
        return f"{self.kind}_{self.basis.family}_k{self.basis.k}"

    @property
    def needs_fit(self) -> bool:
        return self.kind in NEEDS_FIT


@dataclass(frozen=True)
class InstrumentSet:
    w: np.ndarray
    z: np.ndarray

    @property
    def p(self) -> int:
        return self.z.shape[1] // 3


def build_wz(sample: Sample, weights: PeerWeights) -> InstrumentSet:
    """Regressors ``[Gy, X1, G X1]`` and instruments ``[X1, G X1, G^2 X1]``."""
    x1 = sample.x1
    gx1 = peer_aggregate(weights, x1, 1)
    g2x1 = peer_aggregate(weights, x1, 2)
    gy = peer_aggregate(weights, sample.y, 1)
    w = np.column_stack([gy, x1, gx1])
    z = np.column_stack([x1, gx1, g2x1])
    return InstrumentSet(w, z)


def _cond(m):
    with np.errstate(all="ignore"):
        return float(np.linalg.cond(m))


def two_sls(y, w, z) -> np.ndarray:
    """``(W'Z (Z'Z)^-1 Z'W)^-1 W'Z (Z'Z)^-1 Z'y``.

    Raises
    ------
    RankError
        ``Z'Z`` or the projected design ``W'P_Z W`` is numerically singular.
    """
    y, w, z = (np.asarray(v, dtype=float) for v in (y, w, z))
    n = y.shape[0]
    if not n > z.shape[1] >= w.shape[1]:
        raise RankError(f"need n > cols(z) >= cols(w), got {n}, {z.shape[1]}, {w.shape[1]}")
    zz = z.T @ z
    c = _cond(zz)
    if c > COND_FAIL:
        raise RankError(f"Z'Z is singular (cond {c:.3g})", cond=c)
    if c > COND_WARN:
        warnings.warn(f"Z'Z is ill conditioned (cond {c:.3g})", RuntimeWarning, stacklevel=2)
    wz = w.T @ z
    a = wz @ np.linalg.solve(zz, wz.T)
    c_a = _cond(a)
    if c_a > COND_FAIL:
        raise RankError(f"projected design W'P_Z W is singular (cond {c_a:.3g})", cond=c_a)
    return np.linalg.solve(a, wz @ np.linalg.solve(zz, z.T @ y))


def robust_variance(y, w, z, beta) -> np.ndarray:
    """Heteroskedasticity-robust asymptotic variance of ``sqrt(N)(beta_hat - beta)``.

    With ``S_wz = W'Z/N``, ``S_zz = Z'Z/N`` and
    ``S_zzs = sum_i z_i z_i' eta_i^2 / N``, returns ``A^-1 B A^-1`` where
    ``A = S_wz S_zz^-1 S_wz'`` and ``B = S_wz S_zz^-1 S_zzs S_zz^-1 S_wz'``.
    """
    y, w, z = (np.asarray(v, dtype=float) for v in (y, w, z))
    beta = beta.as_array() if isinstance(beta, CoefVector) else np.asarray(beta, dtype=float)
    n = y.shape[0]
    eta = y - w @ beta
    s_wz = w.T @ z / n
    s_zz = z.T @ z / n
    s_zzs = (z * eta[:, None] ** 2).T @ z / n
    c = _cond(s_zz)
    if c > COND_FAIL:
        raise IdentificationError(f"S_zz is singular (cond {c:.3g})", cond=c)
    proj = np.linalg.solve(s_zz, s_wz.T)  # S_zz^-1 S_wz'
    bread = s_wz @ proj
    c_b = _cond(bread)
    if c_b > COND_FAIL:
        raise IdentificationError(f"bread matrix is singular (cond {c_b:.3g})", cond=c_b)
    meat = proj.T @ s_zzs @ proj
    inv = np.linalg.inv(bread)
    omega = inv @ meat @ inv.T
    return 0.5 * (omega + omega.T)


@dataclass(frozen=True)
class EstimateResult:
    """Point estimates, robust variance and diagnostics of one estimator run.

    Attributes
    ----------
    beta_hat : CoefVector
    omega_hat : ndarray
        Asymptotic variance of ``sqrt(N)(beta_hat - beta)``.
    se : ndarray
        ``sqrt(diag(omega_hat) / N)``.
    k_used : int
        Sieve order, 0 for non-sieve controls.
    first_stage_rank : int
        Rank of the residualized instrument matrix.
    residual_eta : ndarray
        Second-stage residuals on the residualized data.
    """

    beta_hat: CoefVector
    omega_hat: np.ndarray
    se: np.ndarray
    k_used: int
    first_stage_rank: int
    residual_eta: np.ndarray
    kind: str = "none"
    label: str = "none"
    n_used: int = 0
    n_excluded: int = 0
    control_rank: int = 0
    diagnostics: dict = field(default_factory=dict)

    def record(self, beta0: CoefVector | None = None, level: float = 0.05) -> dict:
        names = self.beta_hat.names()
        out = {"estimator": self.label, "kind": self.kind, "k": self.k_used,
               "n_used": self.n_used, "n_excluded": self.n_excluded}
        for name, b, s in zip(names, self.beta_hat.as_array(), self.se):
            out[name] = float(b)
            out[f"se_{name}"] = float(s)
        if beta0 is not None:
            for name, r in zip(names, t_reject(self, beta0, level)):
                out[f"reject_{name}"] = int(r)
        return out

    def to_csv(self, path, beta0: CoefVector | None = None, level: float = 0.05) -> Path:
        """One-row CSV: estimator, K, coefficients, SEs and (given beta0) rejections."""
        path = Path(path)
        rec = self.record(beta0, level)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rec))
            writer.writeheader()
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in rec.items()})
        return path


def overlapping_columns(x1, x2) -> list[tuple[int, int]]:
    """Pairs ``(j, m)`` where x1 column j equals x2 column m."""
    x1, x2 = np.atleast_2d(x1), np.atleast_2d(x2)
    return [(j, m) for j in range(x1.shape[1]) for m in range(x2.shape[1])
            if np.array_equal(x1[:, j], x2[:, m])]


def _controls(sample, weights, ctrl, fit, h_values, keep):
    if ctrl.kind == "none":
        return None
    n = keep.sum()
    if ctrl.kind == "linear_a_hat":
        return np.column_stack([np.ones(n), fit.a_hat[keep]])
    if ctrl.kind == "sieve_a_hat":
        return control_design(ctrl.basis, fit.a_hat[keep])
    if ctrl.kind == "sieve_x2_deg":
        deg = scaled_degrees(sample.network)[keep]
        return control_design(ctrl.basis, np.column_stack([sample.x2[keep], deg]))
    return np.column_stack([np.ones(n), np.asarray(h_values, dtype=float)[keep]])


def _check_inputs(sample, ctrl, fit, h_values):
    if ctrl.needs_fit:
        if fit is None:
            raise PreconditionError(f"control {ctrl.kind!r} needs a fitted link model")
        if fit.a_hat.shape != (sample.n,):
            raise PreconditionError("link model fit does not match the sample size")
        if np.any(~np.isfinite(fit.a_hat[fit.retained])):
            raise PreconditionError("link model fit has undefined fixed effects on retained nodes")
    if ctrl.kind == "oracle_h" and h_values is None:
        raise PreconditionError("oracle control needs h(a) evaluated at the true a")
    if ctrl.kind == "sieve_x2_deg" and ctrl.drop_overlap:
        clash = overlapping_columns(sample.x1, sample.x2)
        if clash:
            raise IdentificationError(
                f"x1 columns {[j for j, _ in clash]} duplicate x2 columns; their "
                "coefficients are not identified under the (x2, degree) control"
            )


def estimate(sample: Sample, weights: PeerWeights, ctrl: ControlSpec,
             fit: LinkModelFit | None = None, h_values=None) -> EstimateResult:
    """Residualize (y, W, Z) on the chosen control, then run 2SLS with robust SEs.

    Nodes whose fixed effect is undefined (excluded by the link-model fit)
    are dropped listwise for the controls that use ``a_hat``. W and Z are
    always built on the full network.

    Raises
    ------
    PreconditionError
        Missing fit for an ``a_hat`` control, or missing ``h_values`` for the
        oracle.
    IdentificationError
        The residualized moments are rank deficient, e.g. an x1 column that
        is a function of x2 under the ``(x2, degree)`` control.
    """
    _check_inputs(sample, ctrl, fit, h_values)
    iv = build_wz(sample, weights)
    keep = fit.retained.copy() if ctrl.needs_fit else np.ones(sample.n, dtype=bool)
    y, w, z = sample.y[keep], iv.w[keep], iv.z[keep]
    design = _controls(sample, weights, ctrl, fit, h_values, keep)
    if design is None:
        yt, wt, zt, control_rank = y, w, z, 0
    else:
        stacked = np.column_stack([y, w, z])
        res = residualize(design, stacked, ctrl.basis)
        yt = res.residuals[:, 0]
        wt = res.residuals[:, 1:1 + w.shape[1]]
        zt = res.residuals[:, 1 + w.shape[1]:]
        control_rank = res.design_rank
        _check_wiped(stacked[:, 1:], res.residuals[:, 1:], w.shape[1])

    try:
        beta = two_sls(yt, wt, zt)
    except RankError as exc:
        raise IdentificationError(f"moments not of full rank after residualization: {exc}",
                                  cond=exc.cond) from exc
    omega = robust_variance(yt, wt, zt, beta)
    n_used = yt.shape[0]
    se = np.sqrt(np.clip(np.diag(omega), 0.0, None) / n_used)
    coef = CoefVector.from_array(beta)
    return EstimateResult(
        beta_hat=coef,
        omega_hat=omega,
        se=se,
        k_used=0 if ctrl.basis is None else ctrl.basis.k,
        first_stage_rank=int(np.linalg.matrix_rank(zt)),
        residual_eta=yt - wt @ beta,
        kind=ctrl.kind,
        label=ctrl.label,
        n_used=n_used,
        n_excluded=int((~keep).sum()),
        control_rank=control_rank,
        diagnostics={"cond_zz": _cond(zt.T @ zt)},
    )


def _check_wiped(before, after, n_w):
    """Columns the control projects out entirely leave beta unidentified."""
    norm_before = np.linalg.norm(before, axis=0)
    norm_after = np.linalg.norm(after, axis=0)
    wiped = (norm_before > 0) & (norm_after <= 1e-8 * norm_before)
    if np.any(wiped):
        cols = np.flatnonzero(wiped)
        labels = [f"W[{c}]" if c < n_w else f"Z[{c - n_w}]" for c in cols]
        raise IdentificationError(
            f"control function absorbs columns {labels}; the corresponding "
            "coefficients are not identified"
        )


def t_reject(result: EstimateResult, beta0: CoefVector, level: float = 0.05) -> np.ndarray:
    """Two-sided t-test rejections of ``beta = beta0`` coordinate by coordinate."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    crit = norm.ppf(1 - level / 2)
    dev = np.abs(result.beta_hat.as_array() - beta0.as_array())
    with np.errstate(divide="ignore", invalid="ignore"):
        t = dev / result.se
    return t > crit
