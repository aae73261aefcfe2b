"""User / item affinity graphs and the U-I pairwise graph built from them."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

import numpy as np
import scipy.sparse as sp

from .dataset import RatingDataset, SocialEdges, TagAssignments

_logger = logging.getLogger(__name__)

Entity = Literal["user", "item"]
SOURCES = ("rating-pcc", "tag-jaccard", "social")
_SOURCE_ALIASES = {"pcc": "rating-pcc", "jaccard": "tag-jaccard", "jc": "tag-jaccard"}


class GraphConfigError(ValueError):
    """Missing or inconsistent inputs for graph construction."""


@dataclass(frozen=True, eq=False)
class AffinityGraph:
    """Undirected weighted graph, stored as a symmetric CSR matrix without diagonal."""

    num_nodes: int
    adjacency: sp.csr_matrix
    entity: Entity = "user"

    def __post_init__(self):
        adj = sp.csr_matrix(self.adjacency, dtype=np.float64)
        adj.eliminate_zeros()
        adj.sort_indices()
        if adj.shape != (self.num_nodes, self.num_nodes):
            raise GraphConfigError("adjacency shape does not match num_nodes")
        if adj.nnz:
            if adj.diagonal().any():
                raise GraphConfigError("self-edges are not allowed")
            if adj.data.min() < 0 or adj.data.max() > 1:
                raise GraphConfigError("edge weights must lie in [0, 1]")
            if (adj != adj.T).nnz:
                raise GraphConfigError("adjacency must be symmetric")
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[tuple[int, int, float]], entity: Entity = "user"):
        edges = list(edges)
        if not edges:
            return cls(num_nodes, sp.csr_matrix((num_nodes, num_nodes)), entity)
        arr = np.array(edges, dtype=np.float64)
        i = arr[:, 0].astype(np.int64)
        k = arr[:, 1].astype(np.int64)
        w = arr[:, 2]
        keep = i != k
        i, k, w = i[keep], k[keep], w[keep]
        lo, hi = np.minimum(i, k), np.maximum(i, k)
        # coo -> csr sums duplicates; dedup explicitly so the last weight wins
        key = lo * num_nodes + hi
        _, last = np.unique(key[::-1], return_index=True)
        sel = len(key) - 1 - last
        lo, hi, w = lo[sel], hi[sel], w[sel]
        adj = sp.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
            shape=(num_nodes, num_nodes),
        ).tocsr()
        return cls(num_nodes, adj, entity)

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Each undirected edge once as (low, high, weight), sorted lexicographically."""
        upper = sp.triu(self.adjacency, k=1).tocsr()
        upper.sort_indices()
        rows = np.repeat(np.arange(self.num_nodes), np.diff(upper.indptr))
        return rows, upper.indices.astype(np.int64), upper.data.copy()

    def edges(self) -> list[tuple[int, int, float]]:
        i, k, w = self.edge_arrays()
        return list(zip(i.tolist(), k.tolist(), w.tolist()))

    def neighbors(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.adjacency.indptr[node], self.adjacency.indptr[node + 1]
        return self.adjacency.indices[lo:hi], self.adjacency.data[lo:hi]

    def weight(self, a: int, b: int) -> float:
        return float(self.adjacency[a, b])

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)


# --------------------------------------------------------------------------
# similarity primitives

def pcc_similarity(ratings_a: dict, ratings_b: dict, min_overlap: int = 3) -> float | None:
    """Pearson correlation over the co-rated keys of two sparse vectors.

    Returns ``None`` when fewer than ``min_overlap`` keys are shared or either
    restricted vector is constant.
    """
    shared = sorted(set(ratings_a) & set(ratings_b))
    if len(shared) < max(min_overlap, 2):
        return None
    a = np.array([ratings_a[s] for s in shared], dtype=np.float64)
    b = np.array([ratings_b[s] for s in shared], dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va <= 1e-12 * max(1.0, float(a @ a)) or vb <= 1e-12 * max(1.0, float(b @ b)):
        return None
    return float(np.clip((da @ db) / np.sqrt(va * vb), -1.0, 1.0))


def jaccard_similarity(set_a, set_b) -> float:
    set_a, set_b = set(set_a), set(set_b)
    union = len(set_a | set_b)
    if union == 0:
        return 0.0
    return len(set_a & set_b) / union


def _pcc_block(X: sp.csr_matrix, M: sp.csr_matrix, X2: sp.csr_matrix, rows: slice, min_overlap: int) -> np.ndarray:
    # co-rated sums, one pass; equivalent to the two-pass form up to rounding
    Mr, Xr, X2r = M[rows], X[rows], X2[rows]
    N = (Mr @ M.T).toarray()
    Sxy = (Xr @ X.T).toarray()
    Sx = (Xr @ M.T).toarray()
    Sy = (Mr @ X.T).toarray()
    Sxx = (X2r @ M.T).toarray()
    Syy = (Mr @ X2.T).toarray()
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = Sxy - Sx * Sy / N
        va = Sxx - Sx * Sx / N
        vb = Syy - Sy * Sy / N
        ok = (N >= max(min_overlap, 2)) & (va > 1e-12 * np.maximum(Sxx, 1.0)) & (vb > 1e-12 * np.maximum(Syy, 1.0))
        sim = np.where(ok, cov / np.sqrt(np.where(ok, va * vb, 1.0)), 0.0)
    return np.clip(sim, -1.0, 1.0)


def _top_k_edges(sim_rows: np.ndarray, row_offset: int, top_k: int | None):
    """Candidate edges kept by each row (weight > 0, strongest first, ties to lower index)."""
    out_i, out_k, out_w = [], [], []
    for r in range(sim_rows.shape[0]):
        node = row_offset + r
        row = sim_rows[r]
        cand = np.flatnonzero(row > 0)
        cand = cand[cand != node]
        if top_k is not None and len(cand) > top_k:
            order = np.lexsort((cand, -row[cand]))
            cand = cand[order[:top_k]]
        out_i.append(np.full(len(cand), node, dtype=np.int64))
        out_k.append(cand.astype(np.int64))
        out_w.append(row[cand])
    return out_i, out_k, out_w


def _symmetrize(n: int, rows, cols, weights) -> sp.csr_matrix:
    i = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    k = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    w = np.concatenate(weights) if weights else np.zeros(0)
    lo, hi = np.minimum(i, k), np.maximum(i, k)
    key, first = np.unique(lo * n + hi, return_index=True)
    lo, hi, w = key // n, key % n, w[first]
    return sp.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))), shape=(n, n)
    ).tocsr()


def _similarity_graph(n: int, block_fn, top_k: int | None, chunk: int = 512) -> sp.csr_matrix:
    rows, cols, weights = [], [], []
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        sim = block_fn(slice(start, stop))
        ri, rk, rw = _top_k_edges(sim, start, top_k)
        rows += ri
        cols += rk
        weights += rw
    return _symmetrize(n, rows, cols, weights)


def build_affinity_graph(
    ds: RatingDataset,
    entity: Entity,
    source: str,
    min_overlap: int = 3,
    top_k: int | None = 50,
    aux: SocialEdges | TagAssignments | None = None,
) -> AffinityGraph:
    """Build a user (W) or item (S) affinity graph.

    ``rating-pcc`` keeps max(PCC, 0); ``tag-jaccard`` uses tag-set Jaccard;
    ``social`` gives every declared link weight 1 and is not pruned.  For the
    similarity sources each node nominates its ``top_k`` strongest neighbours
    and an edge survives if either endpoint nominated it.  ``top_k=None``
    disables pruning.
    """
    source = _SOURCE_ALIASES.get(source, source)
    if source not in SOURCES:
        raise GraphConfigError(f"unknown graph source {source!r}")
    if entity not in ("user", "item"):
        raise GraphConfigError(f"unknown entity {entity!r}")
    if top_k is not None and top_k < 1:
        raise GraphConfigError("top_k must be >= 1")
    n = ds.num_users if entity == "user" else ds.num_items

    if source == "social":
        if not isinstance(aux, SocialEdges):
            raise GraphConfigError("social source needs SocialEdges")
        if entity != "user":
            raise GraphConfigError("social links only define a user graph")
        if aux.num_users is not None and aux.num_users != n:
            raise GraphConfigError("social edges were indexed against a different vocabulary")
        return AffinityGraph.from_edges(n, [(a, b, 1.0) for a, b in aux.edges], entity)

    if source == "tag-jaccard":
        if not isinstance(aux, TagAssignments):
            raise GraphConfigError("tag-jaccard source needs TagAssignments")
        if len(aux.tags) != n:
            raise GraphConfigError("tag assignments do not cover every node")
        vocab = {t: c for c, t in enumerate(sorted({t for s in aux.tags for t in s}, key=str))}
        ri = [r for r, s in enumerate(aux.tags) for _ in s]
        ci = [vocab[t] for s in aux.tags for t in s]
        T = sp.csr_matrix((np.ones(len(ri)), (ri, ci)), shape=(n, max(len(vocab), 1)))
        sizes = np.asarray(T.sum(axis=1)).ravel()

        def block(rows: slice) -> np.ndarray:
            inter = (T[rows] @ T.T).toarray()
            union = sizes[rows][:, None] + sizes[None, :] - inter
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(union > 0, inter / union, 0.0)

        return AffinityGraph(n, _similarity_graph(n, block, top_k), entity)

    R = ds.to_csr() if entity == "user" else ds.to_csr().T.tocsr()
    M = R.copy()
    M.data = np.ones_like(M.data)
    R2 = R.multiply(R).tocsr()
    graph = _similarity_graph(n, lambda rows: _pcc_block(R, M, R2, rows, min_overlap), top_k)
    return AffinityGraph(n, graph, entity)


# --------------------------------------------------------------------------
# edge-list serialization

def write_graph(graph: AffinityGraph, path) -> None:
    """``entity num_nodes`` header, then one ``i k weight`` line per undirected edge."""
    i, k, w = graph.edge_arrays()
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{graph.entity} {graph.num_nodes}\n")
        for a, b, c in zip(i.tolist(), k.tolist(), w.tolist()):
            fh.write(f"{a} {b} {c:.9g}\n")


def read_graph(path) -> AffinityGraph:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise GraphConfigError(f"{path}: empty graph file")
    head = lines[0].split()
    if len(head) != 2 or head[0] not in ("user", "item"):
        raise GraphConfigError(f"{path}:1: expected 'user|item num_nodes' header")
    n = int(head[1])
    edges = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GraphConfigError(f"{path}:{lineno}: expected 'i k weight'")
        edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return AffinityGraph.from_edges(n, edges, head[0])


# --------------------------------------------------------------------------
# pairwise U-I graph

@dataclass(frozen=True, eq=False)
class PairwiseGraph:
    """Graph over U-I pairs; node ``i * num_items + j`` is the pair (u_i, v_j).

    Each undirected edge is stored once in ``(a, b, weight)`` arrays.
    """

    num_users: int
    num_items: int
    a: np.ndarray
    b: np.ndarray
    weight: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.num_users * self.num_items

    @property
    def num_edges(self) -> int:
        return len(self.weight)

    def endpoints(self):
        """(i, j, k, o) index arrays for every edge."""
        J = self.num_items
        return self.a // J, self.a % J, self.b // J, self.b % J


def build_pairwise_graph(g_user: AffinityGraph, g_item: AffinityGraph, combiner: str, ds: RatingDataset) -> PairwiseGraph:
    """Combine user and item graphs into the U-I pairwise graph.

    A pair ((i,j),(k,o)) is linked when (i,k) is a user edge or i == k, and
    (j,o) is an item edge or j == o, but not both equalities.  Self-similarity
    is 1, so ``product`` gives W*S and ``min`` gives min(W, S).
    """
    if combiner not in ("product", "min"):
        raise GraphConfigError(f"unknown combiner {combiner!r}")
    I, J = ds.num_users, ds.num_items
    if g_user.num_nodes != I or g_item.num_nodes != J:
        raise GraphConfigError(
            f"graph sizes ({g_user.num_nodes}, {g_item.num_nodes}) do not match dataset ({I}, {J})"
        )
    comb = np.multiply if combiner == "product" else np.minimum
    ui, uk, uw = g_user.edge_arrays()
    ij, io, iw = g_item.edge_arrays()

    # item pairs in both orientations plus the diagonal j == o
    ord_j = np.concatenate([np.arange(J), ij, io])
    ord_o = np.concatenate([np.arange(J), io, ij])
    ord_w = np.concatenate([np.ones(J), iw, iw])

    nu, ni = len(ui), len(ord_j)
    idx = np.int64 if I * J > np.iinfo(np.int32).max else np.int32
    # user edge (i<k) x any ordered item pair
    a1 = (np.repeat(ui, ni) * J + np.tile(ord_j, nu)).astype(idx)
    b1 = (np.repeat(uk, ni) * J + np.tile(ord_o, nu)).astype(idx)
    w1 = comb(np.repeat(uw, ni), np.tile(ord_w, nu))
    # same user, item edge (j<o)
    users = np.arange(I)
    a2 = (np.repeat(users, len(ij)) * J + np.tile(ij, I)).astype(idx)
    b2 = (np.repeat(users, len(ij)) * J + np.tile(io, I)).astype(idx)
    w2 = comb(np.ones(I * len(ij)), np.tile(iw, I))

    a = np.concatenate([a1, a2])
    b = np.concatenate([b1, b2])
    w = np.concatenate([w1, w2])
    keep = w > 0
    return PairwiseGraph(I, J, a[keep], b[keep], w[keep])
