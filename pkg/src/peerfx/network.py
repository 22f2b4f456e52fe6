"""Network containers and peer-effect linear algebra.

Networks are stored densely: the intended regime has link counts growing
with the square of the network size and at most a few thousand nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateNetworkError,
    DimensionError,
    InputFileError,
    NonContractionError,
)

__all__ = [
    "AdjacencyNetwork",
    "PeerWeights",
    "CoefVector",
    "row_normalize",
    "scaled_degrees",
    "peer_aggregate",
    "solve_outcomes",
    "neumann_solve",
    "save_edge_list",
    "load_edge_list",
]


def _frozen(arr):
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AdjacencyNetwork:
    """Undirected 0/1 network with an empty diagonal.

    Parameters
    ----------
    d : array_like
        (n, n) symmetric link indicator matrix.
    """

    d: np.ndarray

    def __post_init__(self):
        d = _frozen(self.d)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DimensionError(f"adjacency must be square, got shape {d.shape}")
        if not np.all((d == 0) | (d == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(d) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if not np.array_equal(d, d.T):
            raise ValueError("adjacency must be symmetric")
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.d.sum(axis=1)

    @property
    def n_dyads(self) -> int:
        return self.n * (self.n - 1) // 2

    @classmethod
    def from_edges(cls, n: int, edges) -> "AdjacencyNetwork":
        d = np.zeros((n, n))
        edges = np.asarray(list(edges), dtype=int).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise DimensionError("edge endpoint outside 0..n-1")
            d[edges[:, 0], edges[:, 1]] = 1.0
            d[edges[:, 1], edges[:, 0]] = 1.0
        return cls(d)

    def edges(self) -> np.ndarray:
        """(m, 2) array of links with i < j, in lexicographic order."""
        i, j = np.nonzero(np.triu(self.d, 1))
        return np.column_stack([i, j])

    def permute(self, perm) -> "AdjacencyNetwork":
        perm = np.asarray(perm)
        return AdjacencyNetwork(self.d[np.ix_(perm, perm)])


@dataclass(frozen=True)
class PeerWeights:
    """Row-normalized peer weights; isolated nodes have all-zero rows."""

    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g", _frozen(self.g))

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def isolated(self) -> np.ndarray:
        return self.g.sum(axis=1) == 0


@dataclass(frozen=True)
class CoefVector:
    """Outcome-equation coefficients (beta1, beta2, beta3).

    ``beta2`` and ``beta3`` have one entry per column of x1.
    """

    beta1: float
    beta2: np.ndarray = field(default_factory=lambda: np.ones(1))
    beta3: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        b2 = np.atleast_1d(np.asarray(self.beta2, dtype=float))
        b3 = np.atleast_1d(np.asarray(self.beta3, dtype=float))
        if b2.shape != b3.shape or b2.ndim != 1:
            raise DimensionError("beta2 and beta3 must be vectors of equal length")
        object.__setattr__(self, "beta1", float(self.beta1))
        object.__setattr__(self, "beta2", _frozen(b2))
        object.__setattr__(self, "beta3", _frozen(b3))

    @property
    def p(self) -> int:
        return self.beta2.shape[0]

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.beta1], self.beta2, self.beta3])

    @classmethod
    def from_array(cls, arr) -> "CoefVector":
        arr = np.asarray(arr, dtype=float).ravel()
        if arr.size < 3 or (arr.size - 1) % 2:
            raise DimensionError(f"cannot split {arr.size} coefficients into (b1, b2, b3)")
        p = (arr.size - 1) // 2
        return cls(arr[0], arr[1 : 1 + p], arr[1 + p :])

    def names(self) -> list[str]:
        if self.p == 1:
            return ["beta1", "beta2", "beta3"]
        return (
            ["beta1"]
            + [f"beta2_{k + 1}" for k in range(self.p)]
            + [f"beta3_{k + 1}" for k in range(self.p)]
        )


def row_normalize(net: AdjacencyNetwork) -> PeerWeights:
    """Divide each row of the adjacency matrix by the node's degree."""
    deg = net.degrees
    g = np.divide(
        net.d, deg[:, None], out=np.zeros_like(net.d), where=deg[:, None] > 0
    )
    return PeerWeights(g)


def scaled_degrees(net: AdjacencyNetwork) -> np.ndarray:
    """Degree of each node divided by ``n - 1``."""
    if net.n < 2:
        raise DegenerateNetworkError("scaled degrees need at least two nodes")
    return net.degrees / (net.n - 1)


def _as_matrix(m, n, name):
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or m.shape[0] != n:
        raise DimensionError(f"{name} must have {n} rows, got shape {m.shape}")
    return m


def peer_aggregate(w: PeerWeights, m, power: int = 1) -> np.ndarray:
    """Return ``G**power @ m`` (``power`` is 1 or 2)."""
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    squeeze = np.ndim(m) == 1
    out = _as_matrix(m, w.n, "m")
    for _ in range(power):
        out = w.g @ out
    return out[:, 0] if squeeze else out


def _check_contraction(beta1):
    if not abs(beta1) < 1:
        raise NonContractionError(f"|beta1| must be < 1, got {beta1}")


def _outcome_rhs(w, coef, x1, h_plus_eps):
    x1 = _as_matrix(x1, w.n, "x1")
    if x1.shape[1] != coef.p:
        raise DimensionError(f"x1 has {x1.shape[1]} columns but coefficients expect {coef.p}")
    h = np.asarray(h_plus_eps, dtype=float)
    if h.shape != (w.n,):
        raise DimensionError(f"h_plus_eps must have shape ({w.n},)")
    return x1 @ coef.beta2 + w.g @ (x1 @ coef.beta3) + h


def solve_outcomes(w: PeerWeights, coef: CoefVector, x1, h_plus_eps) -> np.ndarray:
    """Solve ``y = beta1 G y + X1 b2 + G X1 b3 + h_plus_eps`` for y.

    Uses a dense LU solve of ``(I - beta1 G) y = rhs``.
    """
    _check_contraction(coef.beta1)
    rhs = _outcome_rhs(w, coef, x1, h_plus_eps)
    a = np.eye(w.n) - coef.beta1 * w.g
    return np.linalg.solve(a, rhs)


def neumann_solve(w: PeerWeights, coef: CoefVector, x1, h_plus_eps, terms: int = 200):
    """Truncated Neumann series ``sum_m beta1**m G**m rhs``; a reference for tests."""
    _check_contraction(coef.beta1)
    rhs = _outcome_rhs(w, coef, x1, h_plus_eps)
    total = rhs.copy()
    term = rhs
    for _ in range(terms):
        term = coef.beta1 * (w.g @ term)
        total += term
    return total


def save_edge_list(net: AdjacencyNetwork, path) -> None:
    """Write ``i j`` pairs (0-based, i < j), preceded by a ``# n=`` header."""
    path = Path(path)
    lines = [f"# n={net.n}"] + [f"{i} {j}" for i, j in net.edges()]
    path.write_text("\n".join(lines) + "\n")


def load_edge_list(path, n: int | None = None) -> AdjacencyNetwork:
    """Read an edge list written by :func:`save_edge_list`.

    Duplicate pairs, self-loops and pairs with ``i >= j`` are rejected, so a
    file that does not describe a simple undirected network fails loudly.
    """
    path = Path(path)
    if not path.exists():
        raise InputFileError(f"edge list not found: {path}")
    header_n = None
    pairs = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("n="):
                header_n = int(body[2:])
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputFileError(f"{path}:{lineno}: expected 'i j', got {raw!r}")
        i, j = int(parts[0]), int(parts[1])
        if i == j:
            raise InputFileError(f"{path}:{lineno}: self-loop {i}")
        if i > j:
            raise InputFileError(f"{path}:{lineno}: pair must satisfy i < j")
        pairs.append((i, j))
    if len(set(pairs)) != len(pairs):
        raise InputFileError(f"{path}: duplicate edges")
    if n is None:
        n = header_n
    if n is None:
        n = max((j for _, j in pairs), default=-1) + 1
    if pairs and max(j for _, j in pairs) >= n:
        raise InputFileError(f"{path}: node id exceeds declared n={n}")
    return AdjacencyNetwork.from_edges(n, pairs)
