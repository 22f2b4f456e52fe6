"""Joint MLE of the logit link model with node fixed effects.

The model is ``P(d_ij = 1) = Lambda(t_ij' lambda + a_i + a_j)`` for i < j, and the
log-likelihood is the Bernoulli-logit sum
``sum_{i<j} d_ij s_ij - log(1 + exp(s_ij))`` with ``s_ij`` the linear index.

Fitting alternates between

1. a Jacobi sweep over nodes: each ``a_i`` is moved towards the root of its
   own score holding the other effects fixed (damped, with backtracking on
   the likelihood), and
2. a Newton step for ``lambda`` from the Schur complement of the Hessian
   (fixed effects profiled out), with the fixed effects moved along the
   matching Newton direction and backtracking on the likelihood.

Step 2 alone for ``lambda`` converges only linearly because ``lambda`` and the
fixed effects are strongly coupled; moving both gives the usual quadratic
local rate while the sweeps keep the iteration globally convergent.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from .errors import CollinearityError, NonexistenceError
from .network import AdjacencyNetwork

__all__ = [
    "DyadFeatures",
    "FitOptions",
    "LinkModelFit",
    "dyad_features",
    "fit_joint_mle",
    "profile_update_a",
    "log_likelihood",
    "score",
    "information_matrix",
    "boundary_nodes",
]


@dataclass(frozen=True)
class DyadFeatures:
    """Symmetric dyad features stored as an (n, n, L) array with zero diagonal."""

    t: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        if t.ndim == 2:
            t = t[:, :, None]
        if t.ndim != 3 or t.shape[0] != t.shape[1]:
            raise ValueError(f"features must have shape (n, n, L), got {t.shape}")
        if not np.allclose(t, t.transpose(1, 0, 2)):
            raise ValueError("dyad features must be symmetric: t_ij = t_ji")
        idx = np.arange(t.shape[0])
        t[idx, idx, :] = 0.0
        t.setflags(write=False)
        object.__setattr__(self, "t", t)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"t{k}" for k in range(t.shape[2])))

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def n_features(self) -> int:
        return self.t.shape[2]

    def __getitem__(self, pair):
        i, j = pair
        return self.t[i, j]

    def index(self, lam) -> np.ndarray:
        """``t_ij' lambda`` as an (n, n) matrix."""
        return self.t @ np.asarray(lam, dtype=float)

    def subset(self, keep) -> "DyadFeatures":
        idx = np.flatnonzero(keep)
        return DyadFeatures(self.t[np.ix_(idx, idx)], self.names)

    def permute(self, perm) -> "DyadFeatures":
        perm = np.asarray(perm)
        return DyadFeatures(self.t[np.ix_(perm, perm)], self.names)


def dyad_features(x2, kind: str = "product", func: Callable | None = None) -> DyadFeatures:
    """Build dyad features from node covariates.

    ``product`` gives ``x2_i * x2_j`` and ``abs_diff`` gives ``|x2_i - x2_j|``,
    one feature per covariate column. ``custom`` calls ``func(xi, xj)`` on
    broadcast arrays of shape (n, 1, q) and (1, n, q); it must return an
    (n, n) or (n, n, L) array and be symmetric in its arguments.
    """
    x2 = np.asarray(x2, dtype=float)
    if x2.ndim == 1:
        x2 = x2[:, None]
    xi, xj = x2[:, None, :], x2[None, :, :]
    if kind == "product":
        t = xi * xj
    elif kind == "abs_diff":
        t = np.abs(xi - xj)
    elif kind == "custom":
        if func is None:
            raise ValueError("kind='custom' needs func")
        t = np.asarray(func(xi, xj), dtype=float)
    else:
        raise ValueError(f"unsupported feature kind {kind!r}")
    return DyadFeatures(t)


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-8
    max_sweeps: int = 500
    exclude_boundary: bool = False
    damping: float = 0.5
    inner_tol: float = 1e-10


@dataclass(frozen=True)
class LinkModelFit:
    """Result of :func:`fit_joint_mle`.

    ``a_hat`` has one entry per node of the input network; excluded
    (boundary-degree) nodes carry NaN and are ``False`` in ``retained``.
    """

    lambda_hat: np.ndarray
    a_hat: np.ndarray
    converged: bool
    iterations: int
    max_grad: float
    retained: np.ndarray
    loglik: float
    loglik_path: tuple = field(default=(), repr=False)

    @property
    def excluded(self) -> np.ndarray:
        return np.flatnonzero(~self.retained)

    def probabilities(self, feats: DyadFeatures) -> np.ndarray:
        """Fitted link probabilities among retained nodes."""
        sub = feats.subset(self.retained)
        a = self.a_hat[self.retained]
        p = expit(sub.index(self.lambda_hat) + a[:, None] + a[None, :])
        np.fill_diagonal(p, 0.0)
        return p

    def metadata(self) -> dict:
        return {
            "lambda_hat": [float(v) for v in self.lambda_hat],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "max_grad": float(self.max_grad),
            "loglik": float(self.loglik),
            "excluded_nodes": [int(i) for i in self.excluded],
        }

    def to_csv(self, path) -> tuple[Path, Path]:
        """Write ``node,a_hat`` rows plus a JSON metadata file next to it."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "a_hat"])
            for i, v in enumerate(self.a_hat):
                writer.writerow([i, repr(float(v))])
        meta_path = path.with_suffix(".json")
        meta_path.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return path, meta_path

    @classmethod
    def from_csv(cls, path) -> "LinkModelFit":
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        a_hat = np.array([float(r["a_hat"]) for r in rows])
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(
            lambda_hat=np.array(meta["lambda_hat"]),
            a_hat=a_hat,
            converged=meta["converged"],
            iterations=meta["iterations"],
            max_grad=meta["max_grad"],
            retained=np.isfinite(a_hat),
            loglik=meta["loglik"],
        )


def _index(feats, lam, a):
    s = feats.index(lam) + a[:, None] + a[None, :]
    np.fill_diagonal(s, -np.inf)
    return s


def log_likelihood(lam, a, net: AdjacencyNetwork, feats: DyadFeatures) -> float:
    s = _index(feats, lam, a)
    np.fill_diagonal(s, 0.0)
    ll = net.d * s - np.logaddexp(0.0, s)
    np.fill_diagonal(ll, 0.0)
    return 0.5 * float(ll.sum())


def score(lam, a, net: AdjacencyNetwork, feats: DyadFeatures):
    """Return ``(score_lambda, score_a)``."""
    p = expit(_index(feats, lam, a))
    r = net.d - p
    np.fill_diagonal(r, 0.0)
    g_a = r.sum(axis=1)
    g_lam = 0.5 * np.einsum("ij,ijl->l", r, feats.t)
    return g_lam, g_a


def _hessian_blocks(lam, a, feats):
    p = expit(_index(feats, lam, a))
    w = p * (1.0 - p)
    h_aa = w + np.diag(w.sum(axis=1))
    h_la = np.einsum("ij,ijl->li", w, feats.t)
    h_ll = 0.5 * np.einsum("ij,ijk,ijl->kl", w, feats.t, feats.t)
    return h_ll, h_la, h_aa


def information_matrix(lam, a, feats: DyadFeatures) -> np.ndarray:
    """Observed information (negative Hessian) for ``(lambda, a)``."""
    h_ll, h_la, h_aa = _hessian_blocks(lam, a, feats)
    top = np.hstack([h_ll, h_la])
    bottom = np.hstack([h_la.T, h_aa])
    return np.vstack([top, bottom])


def boundary_nodes(net: AdjacencyNetwork) -> np.ndarray:
    deg = net.degrees
    return np.flatnonzero((deg == 0) | (deg == net.n - 1))


def profile_update_a(lam, net: AdjacencyNetwork, feats: DyadFeatures, a_current,
                     tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Root of each node's own score with the other fixed effects held at ``a_current``.

    Solves ``sum_{j != i} Lambda(t_ij' lambda + x + a_j) = deg_i`` for every i
    using Newton steps safeguarded by a shrinking bracket.
    """
    bad = boundary_nodes(net)
    if bad.size:
        raise NonexistenceError(
            f"fixed effects diverge for boundary-degree nodes {bad.tolist()}", bad
        )
    a_current = np.asarray(a_current, dtype=float)
    n = net.n
    deg = net.degrees
    c = feats.index(lam) + a_current[None, :]
    np.fill_diagonal(c, np.nan)
    base = logit(deg / (n - 1))
    lo = base - np.nanmax(c, axis=1)
    hi = base - np.nanmin(c, axis=1)
    np.fill_diagonal(c, -np.inf)
    x = np.clip(a_current, lo, hi)
    for _ in range(max_iter):
        p = expit(c + x[:, None])
        f = p.sum(axis=1) - deg
        if np.max(np.abs(f)) <= tol:
            break
        fp = (p * (1.0 - p)).sum(axis=1)
        hi = np.where(f > 0, x, hi)
        lo = np.where(f < 0, x, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = x - f / fp
        outside = ~((x_new > lo) & (x_new < hi)) | ~np.isfinite(x_new)
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        if np.array_equal(x_new, x):
            break
        x = x_new
    return x


def _check_features_vary(feats):
    n = feats.n
    iu = np.triu_indices(n, 1)
    vals = feats.t[iu]
    if vals.shape[0] == 0:
        raise CollinearityError("no dyads")
    flat = np.ptp(vals, axis=0) == 0
    if np.any(flat):
        names = [feats.names[k] for k in np.flatnonzero(flat)]
        raise CollinearityError(
            f"dyad features {names} are constant across dyads; lambda is not identified "
            "separately from the fixed effects"
        )


def _check_identified(feats):
    """Reject features lying in the span of the dyad fixed-effect design ``a_i + a_j``.

    The projection onto that span has the closed form ``c_i + c_j`` with
    ``c = (R - 1'R / (2n - 2)) / (n - 2)``, where ``R`` holds the row sums of
    the feature matrix.
    """
    n = feats.n
    t = feats.t
    r = t.sum(axis=1)
    c = (r - r.sum(axis=0) / (2 * n - 2)) / (n - 2)
    resid = t - c[:, None, :] - c[None, :, :]
    idx = np.arange(n)
    resid[idx, idx, :] = 0.0
    gram = 0.5 * np.einsum("ijk,ijl->kl", resid, resid)
    scale = max(float(np.max(0.5 * np.einsum("ijk,ijk->k", t, t))), 1e-300)
    if np.linalg.eigvalsh(gram).min() <= 1e-10 * scale:
        raise CollinearityError(
            "dyad features are collinear with the fixed effects; lambda is not identified"
        )


def _prune_boundary(net):
    keep = np.ones(net.n, dtype=bool)
    while True:
        idx = np.flatnonzero(keep)
        sub = net.d[np.ix_(idx, idx)]
        deg = sub.sum(axis=1)
        bad = (deg == 0) | (deg == idx.size - 1)
        if not bad.any():
            return keep
        keep[idx[bad]] = False
        if keep.sum() < 3:
            raise NonexistenceError("pruning boundary-degree nodes leaves fewer than 3 nodes",
                                    np.flatnonzero(~keep))


def _profiled_newton_step(lam, a, net, feats):
    """Newton direction ``(d_lambda, d_a)`` via the Schur complement of the a-block."""
    g_lam, g_a = score(lam, a, net, feats)
    h_ll, h_la, h_aa = _hessian_blocks(lam, a, feats)
    sol = np.linalg.solve(h_aa, np.column_stack([h_la.T, g_a]))
    schur = h_ll - h_la @ sol[:, :-1]
    d_lam = np.linalg.solve(schur, g_lam - h_la @ sol[:, -1])
    d_a = sol[:, -1] - sol[:, :-1] @ d_lam
    return d_lam, d_a, schur


def fit_joint_mle(net: AdjacencyNetwork, feats: DyadFeatures,
                  opts: FitOptions | None = None) -> LinkModelFit:
    """Maximize the fixed-effect logit likelihood over ``(lambda, a)``.

    Raises
    ------
    CollinearityError
        A feature does not vary across dyads, or lies in the span of the
        fixed effects (singular profiled information).
    NonexistenceError
        Some node has degree 0 or n-1 and ``opts.exclude_boundary`` is off.
    """
    opts = opts or FitOptions()
    if feats.n != net.n:
        raise ValueError("features and network disagree on n")
    _check_features_vary(feats)
    if opts.exclude_boundary:
        retained = _prune_boundary(net)
    else:
        bad = boundary_nodes(net)
        if bad.size:
            raise NonexistenceError(
                f"MLE does not exist: nodes {bad.tolist()} have degree 0 or n-1", bad
            )
        retained = np.ones(net.n, dtype=bool)
    sub_net = AdjacencyNetwork(net.d[np.ix_(retained, retained)]) if not retained.all() else net
    sub_feats = feats.subset(retained) if not retained.all() else feats
    _check_identified(sub_feats)
    n = sub_net.n

    deg_scaled = np.clip(sub_net.degrees / (n - 1), 1e-3, 1 - 1e-3)
    a = logit(deg_scaled) / 2.0
    lam = np.zeros(feats.n_features)

    ll = log_likelihood(lam, a, sub_net, sub_feats)
    path = [ll]
    converged = False
    max_grad = np.inf
    sweeps = 0
    reason = f"did not converge in {opts.max_sweeps} sweeps"
    for sweeps in range(1, opts.max_sweeps + 1):
        target = profile_update_a(lam, sub_net, sub_feats, a, tol=opts.inner_tol)
        step = target - a
        a, ll = _line_search(lambda t: (a + t * step, lam), opts.damping, ll, sub_net, sub_feats)[0::2]

        try:
            d_lam, d_a, _ = _profiled_newton_step(lam, a, sub_net, sub_feats)
        except np.linalg.LinAlgError:
            # information has become singular along the path, typically because
            # the estimates run off to infinity (separation)
            reason = f"stopped at sweep {sweeps}: information matrix became singular"
            break
        a, lam, ll = _line_search(lambda t: (a + t * d_a, lam + t * d_lam), 1.0, ll,
                                  sub_net, sub_feats)
        path.append(ll)

        g_lam, g_a = score(lam, a, sub_net, sub_feats)
        max_grad = float(max(np.max(np.abs(g_lam)), np.max(np.abs(g_a))))
        if max_grad <= opts.tol:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"fixed-effect logit {reason} (max |score| = {max_grad:.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    a_full = np.full(net.n, np.nan)
    a_full[retained] = a
    return LinkModelFit(
        lambda_hat=lam,
        a_hat=a_full,
        converged=converged,
        iterations=sweeps,
        max_grad=max_grad,
        retained=retained,
        loglik=ll,
        loglik_path=tuple(path),
    )


def _line_search(candidate, t0, ll0, net, feats, max_halvings=40):
    """Backtrack from step ``t0`` until the log-likelihood does not decrease."""
    t = t0
    slack = 1e-12 * max(1.0, abs(ll0))
    for _ in range(max_halvings):
        a_new, lam_new = candidate(t)
        ll_new = log_likelihood(lam_new, a_new, net, feats)
        # near the optimum the gain is below the rounding of the sum, so a
        # change within ``slack`` counts as non-decreasing
        if ll_new >= ll0 - slack:
            return a_new, lam_new, ll_new
        t *= 0.5
    a_new, lam_new = candidate(0.0)
    return a_new, lam_new, ll0
