"""Label distances, decayed smoothness confidences and the rating-smoothness energies."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .affinity import AffinityGraph, GraphConfigError, PairwiseGraph
from .dataset import RatingDataset

D_MAX_CAP = 6
INDEX_FORMAT_VERSION = 1


def confidence(d, alpha: float):
    """Smoothness confidence ``alpha ** (d + 1)`` for hop distance ``d``."""
    return np.power(alpha, np.asarray(d) + 1.0) if np.ndim(d) else float(alpha ** (d + 1))


def max_depth(alpha: float, epsilon_conf: float) -> int:
    """Largest hop distance whose confidence stays at or above ``epsilon_conf``.

    Returns -1 when no distance qualifies (alpha == 0 or alpha < epsilon_conf).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if epsilon_conf <= 0:
        raise ValueError("epsilon_conf must be positive")
    if alpha == 0.0:
        return -1
    if alpha == 1.0:
        return D_MAX_CAP
    return min(math.floor(math.log(epsilon_conf) / math.log(alpha)) - 1, D_MAX_CAP)


@dataclass(frozen=True, eq=False)
class DistanceTable:
    """Hop distance from each node to the nearest node that observed a label.

    For ``entity == "user"`` row i, column j holds d(i, j): hops on the user
    graph from user i to the closest rater of item j.  For items, row j column
    i holds the hops on the item graph from item j to the closest item rated by
    user i.  Stored sparsely as ``d_max + 1 - d`` so absent cells mean "farther
    than d_max".
    """

    entity: str
    d_max: int
    encoded: sp.csr_matrix

    def get(self, node: int, label: int) -> float:
        v = self.encoded[node, label]
        return math.inf if v == 0 else float(self.d_max + 1 - v)

    def to_dense(self) -> np.ndarray:
        dense = self.encoded.toarray()
        out = np.full(dense.shape, np.inf)
        hit = dense > 0
        out[hit] = self.d_max + 1 - dense[hit]
        return out


def _multi_source_bfs(adj: sp.csr_matrix, seeds: sp.csr_matrix, d_max: int) -> sp.csr_matrix:
    """Frontier expansion for every seed column at once; returns ``d_max + 1 - d``."""
    A = adj.copy()
    A.data = np.ones_like(A.data)
    reached = seeds.copy().astype(np.float64)
    reached.data = np.ones_like(reached.data)
    reached.eliminate_zeros()
    encoded = reached * float(d_max + 1)
    frontier = reached
    for depth in range(1, d_max + 1):
        if frontier.nnz == 0:
            break
        nxt = A @ frontier
        nxt.data = np.ones_like(nxt.data)
        nxt = nxt - nxt.multiply(reached)
        nxt.eliminate_zeros()
        if nxt.nnz == 0:
            break
        reached = reached + nxt
        encoded = encoded + nxt * float(d_max + 1 - depth)
        frontier = nxt
    encoded = sp.csr_matrix(encoded)
    encoded.sort_indices()
    return encoded


def label_distances(graph: AffinityGraph, ds: RatingDataset, d_max: int) -> DistanceTable:
    """Truncated multi-source BFS from every labeled node, per opposite index."""
    if graph.entity == "user":
        if graph.num_nodes != ds.num_users:
            raise GraphConfigError("user graph size does not match dataset")
        seeds = ds.observed_mask()
    else:
        if graph.num_nodes != ds.num_items:
            raise GraphConfigError("item graph size does not match dataset")
        seeds = ds.observed_mask().T.tocsr()
    if d_max < 0:
        return DistanceTable(graph.entity, d_max, sp.csr_matrix(seeds.shape))
    return DistanceTable(graph.entity, d_max, _multi_source_bfs(graph.adjacency, seeds, d_max))


@dataclass(frozen=True, eq=False)
class SmoothnessIndex:
    """Active smoothness terms with their confidences and edge weights.

    ``user_*`` arrays: one row per (i, k, j) with (i, k) a user edge (i < k),
    ``user_conf`` = alpha**(min(d(i,j), d(k,j)) + 1) and ``user_weight`` = W_ik.
    ``item_*`` arrays: one row per (j, o, i) with (j, o) an item edge (j < o),
    ``item_conf`` from the item-graph distances of j and o to user i's items.
    """

    num_users: int
    num_items: int
    user_i: np.ndarray
    user_k: np.ndarray
    user_j: np.ndarray
    user_conf: np.ndarray
    user_weight: np.ndarray
    item_j: np.ndarray
    item_o: np.ndarray
    item_i: np.ndarray
    item_conf: np.ndarray
    item_weight: np.ndarray
    alpha: float
    epsilon_conf: float
    d_max: int

    @property
    def n_user_triples(self) -> int:
        return len(self.user_i)

    @property
    def n_item_triples(self) -> int:
        return len(self.item_j)

    @property
    def user_coef(self) -> np.ndarray:
        return self.user_conf * self.user_weight

    @property
    def item_coef(self) -> np.ndarray:
        return self.item_conf * self.item_weight

    def save(self, path) -> None:
        arrays = {name: getattr(self, name) for name in _INDEX_ARRAYS}
        np.savez(
            Path(path),
            version=np.int64(INDEX_FORMAT_VERSION),
            shape=np.array([self.num_users, self.num_items, self.d_max], dtype=np.int64),
            params=np.array([self.alpha, self.epsilon_conf]),
            **arrays,
        )

    @classmethod
    def load(cls, path) -> SmoothnessIndex:
        with np.load(Path(path)) as data:
            version = int(data["version"])
            if version != INDEX_FORMAT_VERSION:
                raise ValueError(f"unsupported index format version {version}")
            I, J, d_max = (int(x) for x in data["shape"])
            alpha, eps = (float(x) for x in data["params"])
            arrays = {name: data[name] for name in _INDEX_ARRAYS}
        return cls(I, J, alpha=alpha, epsilon_conf=eps, d_max=d_max, **arrays)


_INDEX_ARRAYS = (
    "user_i", "user_k", "user_j", "user_conf", "user_weight",
    "item_j", "item_o", "item_i", "item_conf", "item_weight",
)


def _edge_triples(graph: AffinityGraph, table: DistanceTable, alpha: float):
    """For every edge (a, b), labels where either endpoint is within d_max."""
    ea, eb, ew = graph.edge_arrays()
    enc = table.encoded
    if len(ea) == 0 or enc.nnz == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, np.zeros(0), np.zeros(0)
    closest = enc[ea].maximum(enc[eb]).tocsr()
    closest.sort_indices()
    counts = np.diff(closest.indptr)
    edge = np.repeat(np.arange(len(ea)), counts)
    d = table.d_max + 1 - closest.data
    return ea[edge], eb[edge], closest.indices.astype(np.int64), confidence(d, alpha), ew[edge]


def build_smoothness_index(
    g_user: AffinityGraph | None,
    g_item: AffinityGraph | None,
    ds: RatingDataset,
    alpha: float,
    epsilon_conf: float = 1e-3,
) -> SmoothnessIndex:
    """Materialize every (edge, label) term whose confidence is at least ``epsilon_conf``."""
    d_max = max_depth(alpha, epsilon_conf)
    I, J = ds.num_users, ds.num_items
    empty = np.zeros(0, dtype=np.int64)
    user = (empty, empty, empty, np.zeros(0), np.zeros(0))
    item = user
    if d_max >= 0:
        if g_user is not None and g_user.num_edges:
            if g_user.entity != "user":
                raise GraphConfigError("g_user must be a user graph")
            user = _edge_triples(g_user, label_distances(g_user, ds, d_max), alpha)
        if g_item is not None and g_item.num_edges:
            if g_item.entity != "item":
                raise GraphConfigError("g_item must be an item graph")
            item = _edge_triples(g_item, label_distances(g_item, ds, d_max), alpha)
    return SmoothnessIndex(
        I, J, *user, *item, alpha=float(alpha), epsilon_conf=float(epsilon_conf), d_max=d_max
    )


# --------------------------------------------------------------------------
# energies (r is always U^T V)

def _dot_cols(A: np.ndarray, ia: np.ndarray, B: np.ndarray, ib: np.ndarray, chunk: int = 1 << 18) -> np.ndarray:
    out = np.empty(len(ia))
    for s in range(0, len(ia), chunk):
        e = s + chunk
        out[s:e] = np.einsum("kn,kn->n", A[:, ia[s:e]], B[:, ib[s:e]])
    return out


def energy_user(index: SmoothnessIndex, model) -> float:
    """Sum of c * W_ik * (U_i.V_j - U_k.V_j)^2 over user triples."""
    if index.n_user_triples == 0:
        return 0.0
    U, V = model.U, model.V
    diff = _dot_cols(U, index.user_i, V, index.user_j) - _dot_cols(U, index.user_k, V, index.user_j)
    return float(np.sum(index.user_coef * diff * diff))


def energy_item(index: SmoothnessIndex, model) -> float:
    """Sum of c * S_jo * (U_i.V_j - U_i.V_o)^2 over item triples."""
    if index.n_item_triples == 0:
        return 0.0
    U, V = model.U, model.V
    diff = _dot_cols(U, index.item_i, V, index.item_j) - _dot_cols(U, index.item_i, V, index.item_o)
    return float(np.sum(index.item_coef * diff * diff))


def energy_joint(index: SmoothnessIndex, model, lambda_F: float, lambda_G: float) -> float:
    if lambda_F < 0 or lambda_G < 0:
        raise ValueError("smoothness degrees must be nonnegative")
    total = 0.0
    if lambda_F:
        total += 0.5 * lambda_F * energy_user(index, model)
    if lambda_G:
        total += 0.5 * lambda_G * energy_item(index, model)
    return total


def energy_pairwise(pg: PairwiseGraph, model, lambda_P: float) -> float:
    """(lambda_P / 2) * sum over pairwise edges of P * (r_ij - r_ko)^2."""
    if lambda_P < 0:
        raise ValueError("lambda_P must be nonnegative")
    if pg.num_edges == 0 or lambda_P == 0:
        return 0.0
    R = model.U.T @ model.V
    flat = R.ravel()
    total = 0.0
    chunk = 1 << 20
    for s in range(0, pg.num_edges, chunk):
        e = s + chunk
        d = flat[pg.a[s:e]] - flat[pg.b[s:e]]
        total += float(np.sum(pg.weight[s:e] * d * d))
    return 0.5 * lambda_P * total
