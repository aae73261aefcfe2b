"""Planted low-rank rating data and affinity graphs derived from the true factors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .affinity import AffinityGraph, _similarity_graph
from .dataset import RatingDataset, from_dense


@dataclass
class SyntheticData:
    dataset: RatingDataset
    U: np.ndarray
    V: np.ndarray
    R: np.ndarray = field(repr=False)


def synthetic_low_rank(
    num_users: int,
    num_items: int,
    rank: int,
    seed: int,
    noise: float = 0.0,
    density: float = 1.0,
    scale: float = 1.0,
) -> SyntheticData:
    """``R = U^T V + noise`` with U, V ~ N(0, scale^2); each cell observed w.p. ``density``."""
    rng = np.random.default_rng(seed)
    U = rng.normal(0.0, scale, size=(rank, num_users))
    V = rng.normal(0.0, scale, size=(rank, num_items))
    R = U.T @ V + noise * rng.normal(size=(num_users, num_items))
    mask = rng.random((num_users, num_items)) < density
    return SyntheticData(from_dense(R, mask), U, V, R)


def planted_graph(factors: np.ndarray, entity: str, top_k: int | None = 10) -> AffinityGraph:
    """kNN graph over columns of ``factors`` with Gaussian-kernel weights.

    Weight is exp(-|f_a - f_b|^2 / (2 s^2)), s the median distance to the
    ``top_k``-th neighbour.  Close factors imply close ratings on every item,
    so these graphs are what the smoothness energies assume.
    """
    F = np.asarray(factors, dtype=np.float64)
    n = F.shape[1]
    sq = np.sum(F * F, axis=0)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * F.T @ F, 0.0)
    np.fill_diagonal(dist2, np.inf)
    kth = min(top_k or n - 1, n - 1)
    scale2 = float(np.median(np.sort(dist2, axis=1)[:, kth - 1])) if n > 1 else 1.0
    scale2 = scale2 if scale2 > 0 else 1.0
    W = np.exp(-dist2 / (2.0 * scale2))

    def block(rows: slice) -> np.ndarray:
        return W[rows]

    return AffinityGraph(n, _similarity_graph(n, block, top_k), entity)


def synthetic_social(num_users: int, degree: int, seed: int) -> list[tuple[int, int]]:
    """Random undirected links, about ``degree`` per user."""
    rng = np.random.default_rng(seed)
    edges = set()
    for i in range(num_users):
        for k in rng.choice(num_users, size=min(degree, num_users - 1), replace=False):
            if k != i:
                edges.add((min(i, int(k)), max(i, int(k))))
    return sorted(edges)
