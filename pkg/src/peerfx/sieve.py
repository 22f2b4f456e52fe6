"""Sieve bases, least-squares residualization and leave-one-out selection of K.

Two families are supported:

``polynomial``
    ``1, v, ..., v**(K-1)`` on [-1, 1]; the intercept is the first of the K
    columns.
``hermite``
    Hermite functions ``H_k(v) exp(-v**2 / 2)`` for ``k = 1..K`` with the
    physicists' polynomials ``H_k``. ``H_0`` is not among the K columns; when
    ``includes_intercept`` is set a constant column is added by
    :func:`control_design`.

For a discrete covariate plus a continuous control (the ``(x2, degree)``
case) the basis is the interaction of the continuous basis with indicators
of each observed level of the discrete covariate.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import OverparameterizationError

__all__ = [
    "SieveBasis",
    "ResidualizedData",
    "CvResult",
    "eval_basis",
    "to_unit_interval",
    "control_design",
    "residualize",
    "loo_cv_select",
    "hermite_functions",
]

FAMILIES = ("polynomial", "hermite")
RCOND = 1e-10


@dataclass(frozen=True)
class SieveBasis:
    family: str = "hermite"
    k: int = 3
    includes_intercept: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        object.__setattr__(self, "k", int(self.k))

    def with_k(self, k: int) -> "SieveBasis":
        return SieveBasis(self.family, k, self.includes_intercept)


@dataclass(frozen=True)
class ResidualizedData:
    """Columns of ``targets`` minus their projection on the control design."""

    residuals: np.ndarray
    basis_used: SieveBasis | None
    design_rank: int


def hermite_functions(v, k: int) -> np.ndarray:
    """Columns ``H_j(v) exp(-v**2/2)`` for ``j = 1..k``."""
    v = np.asarray(v, dtype=float)
    weight = np.exp(-0.5 * v**2)
    out = np.empty((v.size, k))
    h_prev, h = np.ones_like(v), 2.0 * v
    for j in range(1, k + 1):
        out[:, j - 1] = h * weight
        h_prev, h = h, 2.0 * v * h - 2.0 * j * h_prev
    return out


def _univariate(basis, v):
    if basis.family == "polynomial":
        if np.any(np.abs(v) > 1 + 1e-12):
            warnings.warn("polynomial sieve points outside [-1, 1] were clamped",
                          RuntimeWarning, stacklevel=3)
            v = np.clip(v, -1.0, 1.0)
        return np.vander(v, basis.k, increasing=True)
    return hermite_functions(v, basis.k)


def _levels(x2):
    x2 = np.asarray(x2, dtype=float)
    if x2.ndim == 1:
        x2 = x2[:, None]
    _, inverse = np.unique(x2, axis=0, return_inverse=True)
    return np.asarray(inverse).ravel(), int(inverse.max()) + 1


def _interact(levels, n_levels, block):
    n, k = block.shape
    out = np.zeros((n, n_levels * k))
    for m in range(n_levels):
        rows = levels == m
        out[rows, m * k:(m + 1) * k] = block[rows]
    return out


def eval_basis(basis: SieveBasis, points) -> np.ndarray:
    """Evaluate the K basis columns at ``points``.

    Parameters
    ----------
    basis : SieveBasis
    points : array_like
        An n-vector, or an (n, 1 + q) matrix whose leading q columns hold a
        discrete covariate and whose last column holds the continuous control.

    Returns
    -------
    ndarray
        (n, K) design, or (n, M K) for the interaction case with M levels.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if basis.k >= n:
        raise OverparameterizationError(f"K={basis.k} needs more than {n} observations")
    if pts.ndim == 1 or pts.shape[1] == 1:
        return _univariate(basis, pts.reshape(n))
    levels, n_levels = _levels(pts[:, :-1])
    return _interact(levels, n_levels, _univariate(basis, pts[:, -1]))


def to_unit_interval(v) -> np.ndarray:
    """Affine map of ``v`` onto [-1, 1] using its sample min and max."""
    v = np.asarray(v, dtype=float)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return np.clip(2.0 * (v - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def control_design(basis: SieveBasis, points) -> np.ndarray:
    """Design used for residualization: mapped control, basis, and intercept(s).

    The continuous control is mapped onto [-1, 1] first. For the Hermite
    family with ``includes_intercept`` a constant (one per discrete level in
    the interaction case) is prepended.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    interaction = pts.ndim == 2 and pts.shape[1] > 1
    cont = pts[:, -1] if interaction else pts.reshape(n)
    u = to_unit_interval(cont)
    block = eval_basis(basis, u)
    if basis.family == "hermite" and basis.includes_intercept:
        block = np.column_stack([np.ones(n), block])
    if interaction:
        levels, n_levels = _levels(pts[:, :-1])
        # per-level blocks [1, H_1..H_K] for hermite, [1, v..] for polynomial
        if basis.family == "hermite" and basis.includes_intercept:
            block = _interact(levels, n_levels, block)
        else:
            block = eval_basis(basis, np.column_stack([pts[:, :-1], u]))
    if block.shape[1] >= n:
        raise OverparameterizationError(
            f"control design has {block.shape[1]} columns for {n} observations"
        )
    return block


def _range_basis(design):
    u, s, _ = np.linalg.svd(design, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return u[:, :0]
    rank = int(np.sum(s > RCOND * s[0]))
    return u[:, :rank]


def residualize(design, targets, basis: SieveBasis | None = None) -> ResidualizedData:
    """Residuals of each target column from least squares on ``design``.

    The projection uses the SVD with singular values below ``1e-10 * s_max``
    treated as zero, i.e. the Moore-Penrose pseudo-inverse.
    """
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float)
    squeeze = targets.ndim == 1
    t = targets[:, None] if squeeze else targets
    u = _range_basis(design)
    resid = t - u @ (u.T @ t)
    return ResidualizedData(resid[:, 0] if squeeze else resid, basis, u.shape[1])


@dataclass(frozen=True)
class CvResult:
    """Selected K and the per-K table of ``(k, rmse, valid)`` rows."""

    selected_k: int
    table: tuple

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "loo_rmse", "valid", "selected"])
            for k, rmse, valid in self.table:
                writer.writerow([k, repr(float(rmse)), int(valid), int(k == self.selected_k)])
        return path


def loo_rmse(design, target) -> float:
    """Leave-one-out RMSE through the hat-matrix shortcut; NaN if some h_ii = 1."""
    u = _range_basis(np.asarray(design, dtype=float))
    target = np.asarray(target, dtype=float)
    lev = np.einsum("ij,ij->i", u, u)
    if np.any(lev >= 1 - 1e-10):
        return float("nan")
    e = target - u @ (u.T @ target)
    return float(np.sqrt(np.mean((e / (1 - lev)) ** 2)))


def loo_cv_select(basis_family: str, k_grid, control_points, targets,
                  includes_intercept: bool = True) -> CvResult:
    """Pick K from ``k_grid`` minimizing leave-one-out RMSE.

    Ties (to rounding) go to the smaller K. A K whose hat matrix has a unit
    diagonal entry interpolates some point and is excluded.
    """
    k_grid = sorted(int(k) for k in k_grid)
    if not k_grid:
        raise ValueError("k_grid is empty")
    n = np.asarray(control_points).shape[0]
    if k_grid[-1] >= n - 1:
        raise OverparameterizationError(f"max K={k_grid[-1]} must be below n-1={n - 1}")
    targets = np.asarray(targets, dtype=float)
    rows = []
    for k in k_grid:
        basis = SieveBasis(basis_family, k, includes_intercept)
        try:
            rmse = loo_rmse(control_design(basis, control_points), targets)
        except OverparameterizationError:
            rmse = float("nan")
        rows.append((k, rmse, bool(np.isfinite(rmse))))
    valid = [(k, r) for k, r, ok in rows if ok]
    if not valid:
        raise OverparameterizationError("every K in the grid interpolates the data")
    best = min(r for _, r in valid)
    scale = float(np.sqrt(np.mean(targets**2))) or 1.0
    tie = best + 1e-9 * max(best, 1e-3 * scale)
    selected = next(k for k, r in valid if r <= tie)
    return CvResult(selected, tuple(rows))
