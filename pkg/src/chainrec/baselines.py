"""Comparison methods: BMF, graph-regularized BMF (ULFR / UILFR), item-based CF, harmonic SSL."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .affinity import AffinityGraph, GraphConfigError
from .dataset import RatingDataset
from .rscgm import (
    CoordinateDescent,
    FactorModel,
    FactorRestrictionTerm,
    Hyperparameters,
    NumericalError,
    TrainReport,
    init_model,
)

_logger = logging.getLogger(__name__)

Method = Literal["bmf", "ulfr", "uilfr", "icf", "harmonic-ssl"]


@dataclass
class BaselineConfig:
    method: Method = "bmf"
    lambda_f: float = 0.1
    lambda_f_item: float | None = None  # UILFR item-graph strength; defaults to lambda_f
    icf_neighbors: int = 20
    hf_max_iters: int = 1000
    hf_tol: float = 1e-6

    def __post_init__(self):
        if self.method not in ("bmf", "ulfr", "uilfr", "icf", "harmonic-ssl"):
            raise ValueError(f"unknown baseline {self.method!r}")
        if self.lambda_f < 0 or (self.lambda_f_item is not None and self.lambda_f_item < 0):
            raise ValueError("lambda_f must be nonnegative")
        if self.icf_neighbors < 1:
            raise ValueError("icf_neighbors must be >= 1")


# --------------------------------------------------------------------------
# BMF: plain alternating ridge regression, kept separate from the smoothness trainer

def bmf_objective(model: FactorModel, ds: RatingDataset, hp: Hyperparameters) -> float:
    a, b = hp.fit_confidence(ds.mode)
    pred = model.U.T @ model.V
    R = np.zeros_like(pred)
    C = np.full_like(pred, b)
    R[ds.users, ds.items] = ds.ratings
    C[ds.users, ds.items] = a
    fit = 0.5 * float(np.sum(C * (R - pred) ** 2))
    du = model.U - model.mu_U
    dv = model.V - model.mu_V
    return fit + 0.5 * hp.lambda_U * float(np.sum(du**2)) + 0.5 * hp.lambda_V * float(np.sum(dv**2))


def train_bmf(
    ds: RatingDataset, hp: Hyperparameters, mu_U=None, mu_V=None, model: FactorModel | None = None
) -> tuple[FactorModel, TrainReport]:
    """Alternating ridge solves, users ascending then items ascending each sweep."""
    a, b = hp.fit_confidence(ds.mode)
    model = model if model is not None else init_model(ds, hp, mu_U, mu_V)
    U, V = model.U, model.V
    K = model.K
    R = ds.to_csr()
    R.sort_indices()
    Rc = R.tocsc()
    Rc.sort_indices()
    eye = np.eye(K)
    report = TrainReport()
    start = time.perf_counter()
    prev = bmf_objective(model, ds, hp)
    report.initial_objective = prev
    for it in range(hp.max_iters):
        t0 = time.perf_counter()
        gram = b * (V @ V.T) if b else 0.0
        for i in range(ds.num_users):
            cols = R.indices[R.indptr[i]:R.indptr[i + 1]]
            vals = R.data[R.indptr[i]:R.indptr[i + 1]]
            X = V[:, cols]
            A = hp.lambda_U * eye + gram + (a - b) * (X @ X.T)
            U[:, i] = np.linalg.solve(A, hp.lambda_U * model.mu_U[:, i] + a * (X @ vals))
        gram = b * (U @ U.T) if b else 0.0
        for j in range(ds.num_items):
            rows = Rc.indices[Rc.indptr[j]:Rc.indptr[j + 1]]
            vals = Rc.data[Rc.indptr[j]:Rc.indptr[j + 1]]
            X = U[:, rows]
            A = hp.lambda_V * eye + gram + (a - b) * (X @ X.T)
            V[:, j] = np.linalg.solve(A, hp.lambda_V * model.mu_V[:, j] + a * (X @ vals))
        report.sweep_times.append(time.perf_counter() - t0)
        cur = bmf_objective(model, ds, hp)
        if not np.isfinite(cur):
            raise NumericalError(f"BMF objective became non-finite at sweep {it + 1}")
        report.objective_trace.append(cur)
        report.iterations_run = it + 1
        if (prev - cur) / max(abs(prev), np.finfo(float).tiny) < hp.rel_tol:
            report.converged = True
            break
        prev = cur
    report.wall_time = time.perf_counter() - start
    return model, report


# --------------------------------------------------------------------------
# latent factor restriction

def lfr_solver(ds, g_user, g_item, cfg: BaselineConfig, hp: Hyperparameters) -> CoordinateDescent:
    if cfg.method == "ulfr":
        if g_user is None:
            raise GraphConfigError("ULFR needs a user graph")
        term = FactorRestrictionTerm(g_user, None, cfg.lambda_f, 0.0)
    elif cfg.method == "uilfr":
        if g_user is None or g_item is None:
            raise GraphConfigError("UILFR needs both user and item graphs")
        lam_item = cfg.lambda_f if cfg.lambda_f_item is None else cfg.lambda_f_item
        term = FactorRestrictionTerm(g_user, g_item, cfg.lambda_f, lam_item)
    else:
        raise GraphConfigError(f"{cfg.method!r} is not a latent factor restriction method")
    for g, n in ((g_user, ds.num_users), (g_item, ds.num_items)):
        if g is not None and g.num_nodes != n:
            raise GraphConfigError("graph size does not match dataset")
    return CoordinateDescent(ds, hp, [term])


def train_lfr(
    ds: RatingDataset,
    g_user: AffinityGraph | None,
    g_item: AffinityGraph | None,
    cfg: BaselineConfig,
    hp: Hyperparameters,
    mu_U=None,
    mu_V=None,
) -> tuple[FactorModel, TrainReport]:
    """BMF plus graph-Laplacian penalties that pull connected users' (and items') factors together."""
    solver = lfr_solver(ds, g_user, g_item, cfg, hp)
    model = init_model(ds, hp, mu_U, mu_V)
    return model, solver.run(model)


def lfr_objective(model, ds, g_user, g_item, cfg, hp) -> float:
    return lfr_solver(ds, g_user, g_item, cfg, hp).objective(model)


# --------------------------------------------------------------------------
# item-based collaborative filtering

def _fallback(ds: RatingDataset) -> float:
    return ds.global_mean() if ds.mode == "explicit" else 0.0


def _icf_neighbors(ds_rated: np.ndarray, g_item: AffinityGraph, j: int, neighbors: int):
    nbrs, w = g_item.neighbors(j)
    mask = np.isin(nbrs, ds_rated)
    nbrs, w = nbrs[mask], w[mask]
    if len(nbrs) > neighbors:
        order = np.lexsort((nbrs, -w))[:neighbors]
        nbrs, w = nbrs[order], w[order]
    return nbrs, w


def predict_icf(ds: RatingDataset, g_item: AffinityGraph, i: int, j: int, neighbors: int = 20) -> float:
    """Similarity-weighted mean of user i's ratings on the ``neighbors`` items most similar to j."""
    sel = ds.users == i
    rated, vals = ds.items[sel], ds.ratings[sel]
    nbrs, w = _icf_neighbors(rated, g_item, j, neighbors)
    if len(nbrs) == 0 or w.sum() <= 0:
        return _fallback(ds)
    lookup = dict(zip(rated.tolist(), vals.tolist()))
    r = np.array([lookup[o] for o in nbrs.tolist()])
    return float(w @ r / w.sum())


class ICFPredictor:
    """Item-based CF over a fixed training set.

    ``scores`` ranks items for one user: the weighted mean for explicit data,
    and the summed neighbour similarity for implicit data, where every stored
    rating is 1 and the mean would collapse to a constant.
    """

    def __init__(self, train: RatingDataset, g_item: AffinityGraph, neighbors: int = 20):
        if g_item.num_nodes != train.num_items:
            raise GraphConfigError("item graph does not match dataset")
        self.train = train
        self.g_item = g_item
        self.neighbors = neighbors
        R = train.to_csr()
        R.sort_indices()
        self._R = R
        self._fallback = _fallback(train)

    def _user(self, i):
        lo, hi = self._R.indptr[i], self._R.indptr[i + 1]
        return self._R.indices[lo:hi], self._R.data[lo:hi]

    def predict(self, i: int, j: int) -> float:
        rated, vals = self._user(i)
        nbrs, w = _icf_neighbors(rated, self.g_item, j, self.neighbors)
        if len(nbrs) == 0 or w.sum() <= 0:
            return self._fallback
        r = vals[np.searchsorted(rated, nbrs)]
        return float(w @ r / w.sum())

    def predict_many(self, users, items) -> np.ndarray:
        return np.array([self.predict(int(i), int(j)) for i, j in zip(users, items)])

    def scores(self, i: int) -> np.ndarray:
        rated, vals = self._user(i)
        J = self.train.num_items
        if len(rated) == 0:
            return np.full(J, self._fallback)
        sub = self.g_item.adjacency[:, rated].tocsr()
        counts = np.diff(sub.indptr)
        wsum = np.asarray(sub.sum(axis=1)).ravel()
        num = sub @ vals
        for j in np.flatnonzero(counts > self.neighbors):
            nbrs, w = _icf_neighbors(rated, self.g_item, j, self.neighbors)
            r = vals[np.searchsorted(rated, nbrs)]
            wsum[j] = w.sum()
            num[j] = w @ r
        if self.train.mode == "implicit":
            return num
        out = np.full(J, self._fallback)
        ok = wsum > 0
        out[ok] = num[ok] / wsum[ok]
        return out


# --------------------------------------------------------------------------
# harmonic-function label propagation

class HarmonicPredictor:
    """Dense I x J matrix of propagated ratings."""

    def __init__(self, values: np.ndarray, iterations: int, converged: bool, max_change: float):
        self.values = values
        self.iterations = iterations
        self.converged = converged
        self.max_change = max_change

    def predict(self, i: int, j: int) -> float:
        return float(self.values[i, j])

    def predict_many(self, users, items) -> np.ndarray:
        return self.values[np.asarray(users), np.asarray(items)]

    def scores(self, i: int) -> np.ndarray:
        return self.values[i]


def train_harmonic_ssl(ds: RatingDataset, g_item: AffinityGraph, cfg: BaselineConfig | None = None) -> HarmonicPredictor:
    """Per-user Jacobi iteration f_j <- sum_o S_jo f_o / sum_o S_jo with rated items clamped.

    Unlabeled items start at (and isolated ones keep) the user's mean rating for
    explicit data, 0 for implicit data; users without ratings use the global mean.
    """
    cfg = cfg or BaselineConfig(method="harmonic-ssl")
    if g_item.num_nodes != ds.num_items:
        raise GraphConfigError("item graph does not match dataset")
    I, J = ds.num_users, ds.num_items
    S = sp.csr_matrix(g_item.adjacency)
    deg = np.asarray(S.sum(axis=1)).ravel()

    if ds.mode == "explicit":
        counts = ds.user_counts()
        sums = np.bincount(ds.users, weights=ds.ratings, minlength=I)
        start = np.where(counts > 0, sums / np.maximum(counts, 1), ds.global_mean())
    else:
        start = np.zeros(I)
    F = np.repeat(start[:, None], J, axis=1)
    F[ds.users, ds.items] = ds.ratings
    labeled = np.zeros((I, J), dtype=bool)
    labeled[ds.users, ds.items] = True
    free = ~labeled & (deg > 0)[None, :]

    inv_deg = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
    change = 0.0
    converged = False
    it = 0
    for it in range(1, cfg.hf_max_iters + 1):
        avg = np.asarray(S.T @ F.T).T * inv_deg[None, :]
        change = float(np.max(np.abs(avg[free] - F[free]), initial=0.0))
        F[free] = avg[free]
        if change < cfg.hf_tol:
            converged = True
            break
    if not converged:
        _logger.warning("harmonic propagation stopped after %d iterations (max change %.3g)", it, change)
    return HarmonicPredictor(F, it, converged, change)
