"""Monte Carlo data-generating process for peer effects on an endogenous network.

Design (all draws independent across nodes unless stated):

* ``x2_i`` is +1 with probability ``p_x2`` and -1 otherwise.
* ``a_i = phi * (alpha_low * 1{x2_i = -1} + alpha_high * 1{x2_i = 1} + xi_i)``
  with ``xi_i`` a Beta(mu0, mu1) draw minus its mean.
* ``d_ij = 1{x2_i x2_j lambda + a_i + a_j + surplus_offset - u_ij >= 0}``,
  ``u_ij`` standard logistic, one draw per unordered pair.
* ``x1_i = 3 q1 + cos(q2) / 0.8 + e_i`` with ``q1, q2 ~ N(x2_i, 1)``.
* ``y = beta1 G y + beta2 x1 + beta3 G x1 + h(a) + eps``.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import bisect
from scipy.special import expit, roots_jacobi

from . import streams
from .errors import ConfigError, DimensionError, InputFileError
from .network import (
    AdjacencyNetwork,
    CoefVector,
    load_edge_list,
    row_normalize,
    save_edge_list,
    solve_outcomes,
)

__all__ = [
    "DgpConfig",
    "Sample",
    "draw_x2",
    "draw_x1",
    "draw_heterogeneity",
    "form_links",
    "draw_outcomes",
    "simulate",
    "expected_link_probability",
    "degree_limit",
    "calibrate_offset",
    "reference_design",
    "REFERENCE_MEAN_DEGREE",
]

H_FORMS = ("sin_kappa", "exp_kappa", "custom")

# Average degrees of the two network designs, by network size.
REFERENCE_MEAN_DEGREE = {
    "dense": {100: 24.0, 250: 60.0},
    "sparse": {100: 1.9, 250: 4.9},
}


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the simulation design.

    ``phi=None`` resolves to the largest scale keeping ``|a_i| <= 1``.
    When ``target_mean_degree`` is set, ``surplus_offset`` is ignored and
    replaced by the offset whose expected mean degree hits the target.
    """

    n: int = 100
    lambda_: float = 1.0
    alpha_low: float = -1.5
    alpha_high: float = 1.0
    mu0: float = 0.25
    mu1: float = 0.75
    phi: float | None = None
    surplus_offset: float = 0.0
    target_mean_degree: float | None = None
    beta: CoefVector = field(default_factory=lambda: CoefVector(0.2, [1.0], [1.0]))
    h_form: str = "sin_kappa"
    kappa: float = 3.0
    h_expr: str | None = None
    p_x2: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if not (self.mu0 > 0 and self.mu1 > 0):
            raise ConfigError("mu0 and mu1 must be positive")
        if self.alpha_low > self.alpha_high:
            raise ConfigError("alpha_low must not exceed alpha_high")
        if not abs(self.beta.beta1) < 1:
            raise ConfigError("|beta1| must be < 1")
        if self.beta.p != 1:
            raise ConfigError("the simulation design has a single x1 column")
        if self.h_form not in H_FORMS:
            raise ConfigError(f"h_form must be one of {H_FORMS}")
        if self.h_form == "custom" and not self.h_expr:
            raise ConfigError("h_form='custom' needs h_expr")
        if not 0 < self.p_x2 < 1:
            raise ConfigError("p_x2 must lie in (0, 1)")
        if self.phi is not None and self.phi <= 0:
            raise ConfigError("phi must be positive")
        if self.target_mean_degree is not None and not (
            0 < self.target_mean_degree < self.n - 1
        ):
            raise ConfigError("target_mean_degree must lie in (0, n-1)")

    @property
    def xi_mean(self) -> float:
        return self.mu0 / (self.mu0 + self.mu1)

    @property
    def phi_value(self) -> float:
        if self.phi is not None:
            return float(self.phi)
        lo = abs(self.alpha_low - self.xi_mean)
        hi = abs(self.alpha_high + (1 - self.xi_mean))
        return 1.0 / max(lo, hi)

    @property
    def offset_value(self) -> float:
        if self.target_mean_degree is None:
            return float(self.surplus_offset)
        return _cached_offset(self._offset_key())

    def _offset_key(self):
        return (
            self.n,
            self.lambda_,
            self.alpha_low,
            self.alpha_high,
            self.mu0,
            self.mu1,
            self.phi_value,
            self.p_x2,
            self.target_mean_degree,
        )

    def h(self, a) -> np.ndarray:
        """Control function h(a) entering the outcome equation."""
        a = np.asarray(a, dtype=float)
        if self.h_form == "sin_kappa":
            return np.sin(self.kappa * a)
        if self.h_form == "exp_kappa":
            return np.exp(self.kappa * a)
        namespace = {"np": np, "a": a, "kappa": self.kappa}
        out = eval(self.h_expr, {"__builtins__": {}}, namespace)  # noqa: S307
        return np.broadcast_to(np.asarray(out, dtype=float), a.shape).copy()

    def with_(self, **changes) -> "DgpConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "beta":
                out["beta1"] = self.beta.beta1
                out["beta2"] = float(self.beta.beta2[0])
                out["beta3"] = float(self.beta.beta3[0])
            elif f.name == "lambda_":
                out["lambda"] = self.lambda_
            else:
                out[f.name] = getattr(self, f.name)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "DgpConfig":
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)} - {"beta", "lambda_"}
        known |= {"lambda", "beta1", "beta2", "beta3"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown dgp keys: {unknown}")
        beta = CoefVector(
            raw.pop("beta1", 0.2), [raw.pop("beta2", 1.0)], [raw.pop("beta3", 1.0)]
        )
        if "lambda" in raw:
            raw["lambda_"] = raw.pop("lambda")
        try:
            return cls(beta=beta, **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class Sample:
    """Observed data (y, x1, x2, network), plus latent (a, upsilon) when simulated.

    ``x1`` and ``x2`` are stored as (n, p) and (n, q) matrices.
    """

    network: AdjacencyNetwork
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    a: np.ndarray | None = None
    upsilon: np.ndarray | None = None

    def __post_init__(self):
        n = self.network.n
        for name in ("x1", "x2"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim == 1:
                v = v[:, None]
            if v.ndim != 2 or v.shape[0] != n:
                raise DimensionError(f"{name} must have {n} rows")
            object.__setattr__(self, name, v)
        for name in ("y", "a", "upsilon"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if v.shape != (n,):
                raise DimensionError(f"{name} must have shape ({n},)")
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.network.n

    def subset(self, keep) -> "Sample":
        """Induced subsample on the nodes where ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        idx = np.flatnonzero(keep)
        return Sample(
            AdjacencyNetwork(self.network.d[np.ix_(idx, idx)]),
            self.x1[idx],
            self.x2[idx],
            self.y[idx],
            None if self.a is None else self.a[idx],
            None if self.upsilon is None else self.upsilon[idx],
        )

    def to_csv(self, directory, stem: str = "sample") -> tuple[Path, Path]:
        """Write ``<stem>.csv`` (id, y, x1, x2, a, upsilon) and ``<stem>_edges.txt``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        data_path = directory / f"{stem}.csv"
        edge_path = directory / f"{stem}_edges.txt"
        x1_cols = _col_names("x1", self.x1.shape[1])
        x2_cols = _col_names("x2", self.x2.shape[1])
        header = ["id", "y", *x1_cols, *x2_cols]
        if self.a is not None:
            header.append("a")
        if self.upsilon is not None:
            header.append("upsilon")
        with data_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n):
                row = [i, _fmt(self.y[i])]
                row += [_fmt(v) for v in self.x1[i]]
                row += [_fmt(v) for v in self.x2[i]]
                if self.a is not None:
                    row.append(_fmt(self.a[i]))
                if self.upsilon is not None:
                    row.append(_fmt(self.upsilon[i]))
                writer.writerow(row)
        save_edge_list(self.network, edge_path)
        return data_path, edge_path

    @classmethod
    def from_csv(cls, data_path, edge_path, x1_cols=None, x2_cols=None) -> "Sample":
        """Read files written by :meth:`to_csv`.

        ``x1_cols`` and ``x2_cols`` pick columns by header name; by default all
        ``x1*`` and ``x2*`` columns are used.
        """
        data_path = Path(data_path)
        if not data_path.exists():
            raise InputFileError(f"sample file not found: {data_path}")
        with data_path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise InputFileError(f"{data_path} has no rows")
        cols = list(rows[0].keys())
        ids = [int(r["id"]) for r in rows]
        if ids != list(range(len(rows))):
            raise InputFileError(f"{data_path}: ids must be 0..n-1 in order")
        n = len(rows)
        net = load_edge_list(edge_path, n=n)

        def grab(names):
            return np.array([[float(r[c]) for c in names] for r in rows])

        if x1_cols is None:
            x1_cols = [c for c in cols if c == "x1" or c.startswith("x1_")]
        if x2_cols is None:
            x2_cols = [c for c in cols if c == "x2" or c.startswith("x2_")]
        missing = sorted((set(x1_cols) | set(x2_cols)) - set(cols))
        if missing:
            raise InputFileError(f"{data_path}: missing columns {missing}")
        if not x1_cols or not x2_cols or "y" not in cols:
            raise InputFileError(f"{data_path}: needs y, x1 and x2 columns")
        a = grab(["a"])[:, 0] if "a" in cols else None
        ups = grab(["upsilon"])[:, 0] if "upsilon" in cols else None
        return cls(net, grab(x1_cols), grab(x2_cols), grab(["y"])[:, 0], a, ups)


def _col_names(base, k):
    return [base] if k == 1 else [f"{base}_{j + 1}" for j in range(k)]


def _fmt(v) -> str:
    return repr(float(v))


# ----------------------------------------------------------------------------
# draws


def draw_x2(cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    return np.where(rng.random(cfg.n) < cfg.p_x2, 1.0, -1.0)


def draw_x1(x2, rng: np.random.Generator) -> np.ndarray:
    """``3 q1 + cos(q2) / 0.8 + e`` with ``q1, q2 ~ N(x2, 1)`` and ``e ~ N(0, 1)``."""
    x2 = np.asarray(x2, dtype=float)
    q1 = rng.normal(x2, 1.0)
    q2 = rng.normal(x2, 1.0)
    e = rng.normal(size=x2.shape)
    return 3.0 * q1 + np.cos(q2) / 0.8 + e


def _group_level(cfg, x2):
    return np.where(np.asarray(x2) == 1, cfg.alpha_high, cfg.alpha_low)


def draw_heterogeneity(cfg: DgpConfig, x2, rng: np.random.Generator) -> np.ndarray:
    xi = rng.beta(cfg.mu0, cfg.mu1, size=np.shape(x2)) - cfg.xi_mean
    return cfg.phi_value * (_group_level(cfg, x2) + xi)


def link_surplus(cfg: DgpConfig, x2, a) -> np.ndarray:
    x2 = np.asarray(x2, dtype=float)
    a = np.asarray(a, dtype=float)
    return np.outer(x2, x2) * cfg.lambda_ + a[:, None] + a[None, :] + cfg.offset_value


def form_links(cfg: DgpConfig, x2, a, rng=None, u=None) -> AdjacencyNetwork:
    """Draw the network. Pass ``u`` (symmetric shock matrix) to fix the shocks."""
    n = len(a)
    if u is None:
        u = streams.dyad_shocks(n, rng)
    d = (link_surplus(cfg, x2, a) - u >= 0).astype(float)
    np.fill_diagonal(d, 0.0)
    return AdjacencyNetwork(d)


def draw_outcomes(cfg: DgpConfig, net: AdjacencyNetwork, x1, a, rng=None, eps=None):
    """Return ``(y, upsilon)`` where ``upsilon = h(a) + eps``."""
    a = np.asarray(a, dtype=float)
    if eps is None:
        eps = rng.normal(size=a.shape)
    upsilon = cfg.h(a) + eps
    y = solve_outcomes(row_normalize(net), cfg.beta, x1, upsilon)
    return y, upsilon


def simulate(cfg: DgpConfig, replication: int = 0) -> Sample:
    """One draw of the full design from the replication's own random streams."""
    seed = cfg.seed
    x2 = draw_x2(cfg, streams.stream(seed, replication, "x2"))
    x1 = draw_x1(x2, streams.stream(seed, replication, "x1"))
    a = draw_heterogeneity(cfg, x2, streams.stream(seed, replication, "xi"))
    net = form_links(cfg, x2, a, streams.stream(seed, replication, "links"))
    y, ups = draw_outcomes(cfg, net, x1, a, streams.stream(seed, replication, "eps"))
    return Sample(net, x1, x2, y, a, ups)


# ----------------------------------------------------------------------------
# population quantities by quadrature


def _xi_nodes(cfg, order=48):
    # Gauss-Jacobi rule for Beta(mu0, mu1) on [0, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        x, w = roots_jacobi(order, cfg.mu1 - 1.0, cfg.mu0 - 1.0)
    return (x + 1.0) / 2.0 - cfg.xi_mean, w / w.sum()


def _population_nodes(cfg, order=48):
    """Quadrature nodes (x2, a, weight) for the law of (x2_j, a_j)."""
    xi, w = _xi_nodes(cfg, order)
    phi = cfg.phi_value
    x2 = np.concatenate([np.full(xi.size, 1.0), np.full(xi.size, -1.0)])
    a = np.concatenate([phi * (cfg.alpha_high + xi), phi * (cfg.alpha_low + xi)])
    wt = np.concatenate([cfg.p_x2 * w, (1 - cfg.p_x2) * w])
    return x2, a, wt


def degree_limit(cfg: DgpConfig, x2, a, offset: float | None = None) -> np.ndarray:
    """Limit of the scaled degree given ``(x2_i, a_i)``.

    ``E_j[Lambda(x2_i x2_j lambda + a_i + a_j + offset)]`` over the law of
    ``(x2_j, a_j)``, computed with Gauss-Jacobi quadrature.
    """
    off = cfg.offset_value if offset is None else offset
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    qx, qa, qw = _population_nodes(cfg)
    s = np.outer(x2, qx) * cfg.lambda_ + a[:, None] + qa[None, :] + off
    return expit(s) @ qw


def expected_link_probability(cfg: DgpConfig, offset: float | None = None) -> float:
    """Probability that two independent nodes link."""
    qx, qa, qw = _population_nodes(cfg)
    return float(degree_limit(cfg, qx, qa, offset) @ qw)


def calibrate_offset(cfg: DgpConfig, target_mean_degree: float, xtol=1e-12) -> float:
    """Offset whose expected mean degree ``(n-1) * p`` equals the target, by bisection."""
    n1 = cfg.n - 1
    if not 0 < target_mean_degree < n1:
        raise ConfigError("target mean degree must lie in (0, n-1)")

    def gap(off):
        return n1 * expected_link_probability(cfg, off) - target_mean_degree

    lo, hi = -1.0, 1.0
    while gap(lo) > 0:
        lo *= 2
    while gap(hi) < 0:
        hi *= 2
    return float(bisect(gap, lo, hi, xtol=xtol))


_OFFSET_CACHE: dict = {}


def _cached_offset(key):
    if key not in _OFFSET_CACHE:
        n, lam, alo, ahi, mu0, mu1, phi, px, target = key
        base = DgpConfig(
            n=n, lambda_=lam, alpha_low=alo, alpha_high=ahi, mu0=mu0, mu1=mu1,
            phi=phi, p_x2=px,
        )
        _OFFSET_CACHE[key] = calibrate_offset(base, target)
    return _OFFSET_CACHE[key]


def reference_design(kind: str, n: int, beta1: float, **overrides) -> DgpConfig:
    """Dense or sparse design with the offset calibrated to the reference mean degree.

    Sizes other than 100 and 250 keep the link density of the N=100 design.
    """
    try:
        table = REFERENCE_MEAN_DEGREE[kind]
    except KeyError:
        raise ConfigError(f"design kind must be 'dense' or 'sparse', got {kind!r}") from None
    target = table.get(n, table[100] * (n - 1) / 99)
    params = dict(n=n, beta=CoefVector(beta1, [1.0], [1.0]), target_mean_degree=target)
    params.update(overrides)
    return DgpConfig(**params)
