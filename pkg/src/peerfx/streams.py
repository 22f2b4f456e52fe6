"""Counter-based random streams keyed by (seed, replication, purpose).

Each replication and each purpose (covariates, heterogeneity, link shocks,
outcome errors) gets its own Philox stream, so any replication can be
regenerated on its own, in any order and in any worker process.
"""
from __future__ import annotations

import numpy as np

PURPOSES = {
    "x2": 0,
    "x1": 1,
    "xi": 2,
    "links": 3,
    "eps": 4,
}


def stream(seed: int, replication: int, purpose: str) -> np.random.Generator:
    try:
        code = PURPOSES[purpose]
    except KeyError:
        raise KeyError(f"unknown stream purpose {purpose!r}") from None
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication), code))
    return np.random.Generator(np.random.Philox(ss))


def dyad_shocks(n: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric (n, n) matrix of standard logistic shocks, one per pair i < j.

    Draws fill the strict upper triangle in row-major order, so shock (i, j)
    depends only on the pair's position in that fixed enumeration.
    """
    iu = np.triu_indices(n, 1)
    u = np.zeros((n, n))
    u[iu] = rng.logistic(size=iu[0].size)
    return u + u.T
