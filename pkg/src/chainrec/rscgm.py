"""Chain-graph recommender trainer: MAP objective and exact block coordinate descent.

The objective is

    1/2 sum_ij C_ij (R_ij - U_i.V_j)^2
    + lambda_F/2 * E_user + lambda_G/2 * E_item          (confidence-aware smoothness)
    + lambda_U/2 sum_i |U_i - mu_i|^2 + lambda_V/2 sum_j |V_j - mu_j|^2

It is quadratic in each U_i (and each V_j) with the others held fixed, so every
block update solves a K x K positive-definite system ``A x = b`` and the
partial gradient is ``A x - b``.
"""
from __future__ import annotations

import dataclasses
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .affinity import AffinityGraph, GraphConfigError, PairwiseGraph
from .dataset import RatingDataset
from .smoothness import SmoothnessIndex, build_smoothness_index, energy_joint, energy_pairwise

_logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class NumericalError(FloatingPointError):
    """Non-finite values reached a solve or the objective."""


@dataclass
class Hyperparameters:
    K: int = 10
    lambda_U: float = 0.1
    lambda_V: float = 0.1
    lambda_F: float = 0.1
    lambda_G: float = 0.1
    alpha: float = 0.5
    label_conf_a: float = 1.0
    label_conf_b: float = 0.01
    epsilon_conf: float = 1e-3
    max_iters: int = 100
    rel_tol: float = 1e-6
    seed: int = 0
    lambda_P: float = 0.1
    init_scale: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.lambda_U <= 0 or self.lambda_V <= 0:
            raise ValueError("lambda_U and lambda_V must be positive")
        for name in ("lambda_F", "lambda_G", "lambda_P", "init_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.label_conf_a > self.label_conf_b >= 0:
            raise ValueError("label confidences need a > b >= 0")
        if self.epsilon_conf <= 0:
            raise ValueError("epsilon_conf must be positive")
        if self.max_iters < 0 or self.rel_tol < 0:
            raise ValueError("max_iters and rel_tol must be nonnegative")

    @classmethod
    def defaults_for(cls, mode: str, **overrides) -> Hyperparameters:
        """Explicit data: lambda_U = lambda_V = 0.1.  Implicit: lambda_U = 0.01, lambda_V = 1."""
        base = {"lambda_U": 0.1, "lambda_V": 0.1} if mode == "explicit" else {"lambda_U": 0.01, "lambda_V": 1.0}
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, values: dict) -> Hyperparameters:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> Hyperparameters:
        return dataclasses.replace(self, **changes)

    def fit_confidence(self, mode: str) -> tuple[float, float]:
        """(a, b) weights for observed / unobserved cells; explicit data uses (1, 0)."""
        if mode == "explicit":
            return 1.0, 0.0
        return self.label_conf_a, self.label_conf_b


@dataclass(eq=False)
class FactorModel:
    """Latent factors ``U`` (K x I) and ``V`` (K x J) with their prior means."""

    U: np.ndarray
    V: np.ndarray
    mu_U: np.ndarray
    mu_V: np.ndarray

    @property
    def K(self) -> int:
        return self.U.shape[0]

    @property
    def num_users(self) -> int:
        return self.U.shape[1]

    @property
    def num_items(self) -> int:
        return self.V.shape[1]

    def copy(self) -> FactorModel:
        return FactorModel(self.U.copy(), self.V.copy(), self.mu_U.copy(), self.mu_V.copy())

    def predict(self, i: int, j: int) -> float:
        return predict(self, i, j)

    def predict_many(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        return np.einsum("kn,kn->n", self.U[:, users], self.V[:, items])

    def scores(self, i: int) -> np.ndarray:
        return self.U[:, i] @ self.V

    def save(self, path) -> None:
        save_checkpoint(self, path)


@dataclass
class TrainReport:
    objective_trace: list[float] = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    wall_time: float = 0.0
    initial_objective: float = float("nan")
    sweep_times: list[float] = field(default_factory=list)
    setup_time: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# --------------------------------------------------------------------------
# model creation and persistence

def init_model(ds: RatingDataset, hp: Hyperparameters, mu_U=None, mu_V=None) -> FactorModel:
    """Prior means plus N(0, init_scale^2) noise drawn from ``default_rng(hp.seed)``."""
    K, I, J = hp.K, ds.num_users, ds.num_items
    mu_U = np.zeros((K, I)) if mu_U is None else np.array(mu_U, dtype=np.float64)
    mu_V = np.zeros((K, J)) if mu_V is None else np.array(mu_V, dtype=np.float64)
    if mu_U.shape != (K, I):
        raise ValueError(f"mu_U has shape {mu_U.shape}, expected {(K, I)}")
    if mu_V.shape != (K, J):
        raise ValueError(f"mu_V has shape {mu_V.shape}, expected {(K, J)}")
    rng = np.random.default_rng(hp.seed)
    U = mu_U + rng.normal(0.0, hp.init_scale, size=(K, I))
    V = mu_V + rng.normal(0.0, hp.init_scale, size=(K, J))
    return FactorModel(U, V, mu_U, mu_V)


def topic_prior(topics: np.ndarray, K: int) -> np.ndarray:
    """Item prior means (K x J) from per-item topic vectors (J x K)."""
    topics = np.asarray(topics, dtype=np.float64)
    if topics.ndim != 2 or topics.shape[1] != K:
        raise ValueError(f"topic vectors must have length K={K}")
    if np.any(topics < 0):
        raise ValueError("topic vectors must be nonnegative")
    return np.ascontiguousarray(topics.T)


def save_checkpoint(model: FactorModel, path) -> None:
    """Header of four little-endian uint64 (K, I, J, version), then U and V row-major float64."""
    K, I, J = model.K, model.num_users, model.num_items
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<4Q", K, I, J, CHECKPOINT_VERSION))
        fh.write(np.ascontiguousarray(model.U, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.V, dtype="<f8").tobytes())


def load_checkpoint(path) -> FactorModel:
    blob = Path(path).read_bytes()
    if len(blob) < 32:
        raise ValueError(f"{path}: truncated checkpoint header")
    K, I, J, version = struct.unpack("<4Q", blob[:32])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    expected = 32 + 8 * K * (I + J)
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    body = np.frombuffer(blob, dtype="<f8", offset=32)
    U = body[: K * I].reshape(K, I).astype(np.float64)
    V = body[K * I:].reshape(K, J).astype(np.float64)
    return FactorModel(U, V, np.zeros_like(U), np.zeros_like(V))


# --------------------------------------------------------------------------
# objective terms

def _group(keys: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Stable grouping permutation and CSR-style offsets."""
    order = np.argsort(keys, kind="stable")
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=offsets[1:])
    return order, offsets


class FitTerm:
    """1/2 sum C_ij (R_ij - U_i.V_j)^2 with C = a on observed cells and b elsewhere."""

    def __init__(self, ds: RatingDataset, a: float, b: float):
        self.ds = ds
        self.a, self.b = a, b
        R = ds.to_csr()
        R.sort_indices()
        self.by_user = R
        C = R.tocsc()
        C.sort_indices()
        self.by_item = C
        self._gram_V = None
        self._gram_U = None

    def prepare_users(self, U, V):
        self._gram_V = self.b * (V @ V.T) if self.b else None

    def prepare_items(self, U, V):
        self._gram_U = self.b * (U @ U.T) if self.b else None

    def add_user_system(self, i, U, V, A, rhs):
        lo, hi = self.by_user.indptr[i], self.by_user.indptr[i + 1]
        if self.b:
            A += self._gram_V if self._gram_V is not None else self.b * (V @ V.T)
        if hi > lo:
            X = V[:, self.by_user.indices[lo:hi]]
            A += (self.a - self.b) * (X @ X.T)
            rhs += self.a * (X @ self.by_user.data[lo:hi])

    def add_item_system(self, j, U, V, A, rhs):
        lo, hi = self.by_item.indptr[j], self.by_item.indptr[j + 1]
        if self.b:
            A += self._gram_U if self._gram_U is not None else self.b * (U @ U.T)
        if hi > lo:
            X = U[:, self.by_item.indices[lo:hi]]
            A += (self.a - self.b) * (X @ X.T)
            rhs += self.a * (X @ self.by_item.data[lo:hi])

    def value(self, U, V) -> float:
        ds = self.ds
        pred = np.einsum("kn,kn->n", U[:, ds.users], V[:, ds.items])
        resid = ds.ratings - pred
        total = self.a * float(resid @ resid)
        if self.b:
            total += self.b * (float(np.sum((U @ U.T) * (V @ V.T))) - float(pred @ pred))
        return 0.5 * total


class JointSmoothnessTerm:
    """lambda_F/2 * E_user + lambda_G/2 * E_item over a :class:`SmoothnessIndex`."""

    def __init__(self, index: SmoothnessIndex, lambda_F: float, lambda_G: float):
        self.index = index
        self.lambda_F, self.lambda_G = lambda_F, lambda_G
        I, J = index.num_users, index.num_items
        ix = index
        # the index properties rebuild these products on each access
        self._user_coef = ix.user_coef
        self._item_coef = ix.item_coef
        # user triple (i, k, j) couples U_i and U_k through V_j
        self._u_self = np.concatenate([ix.user_i, ix.user_k])
        self._u_other = np.concatenate([ix.user_k, ix.user_i])
        self._u_item = np.concatenate([ix.user_j, ix.user_j])
        self._u_coef = np.concatenate([self._user_coef, self._user_coef])
        self._u_order, self._u_off = _group(self._u_self, I)
        # item triples seen from user i: quadratic in U_i only
        self._iu_order, self._iu_off = _group(ix.item_i, I)
        # item triple (j, o, i) couples V_j and V_o through U_i
        self._v_self = np.concatenate([ix.item_j, ix.item_o])
        self._v_other = np.concatenate([ix.item_o, ix.item_j])
        self._v_user = np.concatenate([ix.item_i, ix.item_i])
        self._v_coef = np.concatenate([self._item_coef, self._item_coef])
        self._v_order, self._v_off = _group(self._v_self, J)
        # user triples seen from item j: quadratic in V_j only
        self._uj_order, self._uj_off = _group(ix.user_j, J)

    def prepare_users(self, U, V):
        pass

    prepare_items = prepare_users

    def add_user_system(self, i, U, V, A, rhs):
        ix = self.index
        if self.lambda_F:
            sel = self._u_order[self._u_off[i]:self._u_off[i + 1]]
            if len(sel):
                X = V[:, self._u_item[sel]]
                c = self.lambda_F * self._u_coef[sel]
                A += (X * c) @ X.T
                other = np.einsum("kn,kn->n", X, U[:, self._u_other[sel]])
                rhs += X @ (c * other)
        if self.lambda_G:
            sel = self._iu_order[self._iu_off[i]:self._iu_off[i + 1]]
            if len(sel):
                D = V[:, ix.item_j[sel]] - V[:, ix.item_o[sel]]
                A += (D * (self.lambda_G * self._item_coef[sel])) @ D.T

    def add_item_system(self, j, U, V, A, rhs):
        ix = self.index
        if self.lambda_G:
            sel = self._v_order[self._v_off[j]:self._v_off[j + 1]]
            if len(sel):
                X = U[:, self._v_user[sel]]
                c = self.lambda_G * self._v_coef[sel]
                A += (X * c) @ X.T
                other = np.einsum("kn,kn->n", X, V[:, self._v_other[sel]])
                rhs += X @ (c * other)
        if self.lambda_F:
            sel = self._uj_order[self._uj_off[j]:self._uj_off[j + 1]]
            if len(sel):
                D = U[:, ix.user_i[sel]] - U[:, ix.user_k[sel]]
                A += (D * (self.lambda_F * self._user_coef[sel])) @ D.T

    def value(self, U, V) -> float:
        return energy_joint(self.index, _Factors(U, V), self.lambda_F, self.lambda_G)


class PairwiseSmoothnessTerm:
    """lambda_P/2 * sum P (r_ij - r_ko)^2 over the edges of a :class:`PairwiseGraph`."""

    def __init__(self, pg: PairwiseGraph, lambda_P: float):
        self.pg = pg
        self.lambda_P = lambda_P
        I, J = pg.num_users, pg.num_items
        ai, aj, bk, bo = pg.endpoints()
        self._ai, self._aj, self._bk, self._bo = ai, aj, bk, bo
        idx = np.int32 if pg.num_edges < np.iinfo(np.int32).max else np.int64
        self._a_user = _group(ai.astype(np.int64), I)
        self._b_user = _group(bk.astype(np.int64), I)
        self._a_item = _group(aj.astype(np.int64), J)
        self._b_item = _group(bo.astype(np.int64), J)
        for name in ("_a_user", "_b_user", "_a_item", "_b_item"):
            order, off = getattr(self, name)
            setattr(self, name, (order.astype(idx), off))

    def prepare_users(self, U, V):
        pass

    prepare_items = prepare_users

    @staticmethod
    def _sel(group, n):
        order, off = group
        return order[off[n]:off[n + 1]]

    def add_user_system(self, i, U, V, A, rhs):
        if not self.lambda_P:
            return
        w = self.pg.weight
        # edges with user i at endpoint a
        e = self._sel(self._a_user, i)
        if len(e):
            cross = self._bk[e] != i
            ec, es = e[cross], e[~cross]
            if len(ec):
                X = V[:, self._aj[ec]]
                c = self.lambda_P * w[ec]
                A += (X * c) @ X.T
                other = np.einsum("kn,kn->n", U[:, self._bk[ec]], V[:, self._bo[ec]])
                rhs += X @ (c * other)
            if len(es):
                D = V[:, self._aj[es]] - V[:, self._bo[es]]
                A += (D * (self.lambda_P * w[es])) @ D.T
        # edges with user i at endpoint b (same-user edges were handled above)
        e = self._sel(self._b_user, i)
        if len(e):
            e = e[self._ai[e] != i]
            if len(e):
                X = V[:, self._bo[e]]
                c = self.lambda_P * w[e]
                A += (X * c) @ X.T
                other = np.einsum("kn,kn->n", U[:, self._ai[e]], V[:, self._aj[e]])
                rhs += X @ (c * other)

    def add_item_system(self, j, U, V, A, rhs):
        if not self.lambda_P:
            return
        w = self.pg.weight
        e = self._sel(self._a_item, j)
        if len(e):
            cross = self._bo[e] != j
            ec, es = e[cross], e[~cross]
            if len(ec):
                X = U[:, self._ai[ec]]
                c = self.lambda_P * w[ec]
                A += (X * c) @ X.T
                other = np.einsum("kn,kn->n", U[:, self._bk[ec]], V[:, self._bo[ec]])
                rhs += X @ (c * other)
            if len(es):
                D = U[:, self._ai[es]] - U[:, self._bk[es]]
                A += (D * (self.lambda_P * w[es])) @ D.T
        e = self._sel(self._b_item, j)
        if len(e):
            e = e[self._aj[e] != j]
            if len(e):
                X = U[:, self._bk[e]]
                c = self.lambda_P * w[e]
                A += (X * c) @ X.T
                other = np.einsum("kn,kn->n", U[:, self._ai[e]], V[:, self._aj[e]])
                rhs += X @ (c * other)

    def value(self, U, V) -> float:
        return energy_pairwise(self.pg, _Factors(U, V), self.lambda_P)


class FactorRestrictionTerm:
    """Laplacian penalty lambda/2 * sum W_ik |U_i - U_k|^2 (and the item analogue)."""

    def __init__(self, g_user: AffinityGraph | None, g_item: AffinityGraph | None,
                 lambda_user: float, lambda_item: float):
        self.g_user, self.g_item = g_user, g_item
        self.lambda_user = lambda_user if g_user is not None else 0.0
        self.lambda_item = lambda_item if g_item is not None else 0.0

    def prepare_users(self, U, V):
        pass

    prepare_items = prepare_users

    @staticmethod
    def _add(graph, lam, n, F, A, rhs):
        nbrs, w = graph.neighbors(n)
        if len(nbrs):
            A[np.diag_indices_from(A)] += lam * w.sum()
            rhs += lam * (F[:, nbrs] @ w)

    def add_user_system(self, i, U, V, A, rhs):
        if self.lambda_user:
            self._add(self.g_user, self.lambda_user, i, U, A, rhs)

    def add_item_system(self, j, U, V, A, rhs):
        if self.lambda_item:
            self._add(self.g_item, self.lambda_item, j, V, A, rhs)

    @staticmethod
    def _energy(graph, lam, F) -> float:
        a, b, w = graph.edge_arrays()
        d = F[:, a] - F[:, b]
        return 0.5 * lam * float(np.sum(w * np.sum(d * d, axis=0)))

    def value(self, U, V) -> float:
        total = 0.0
        if self.lambda_user:
            total += self._energy(self.g_user, self.lambda_user, U)
        if self.lambda_item:
            total += self._energy(self.g_item, self.lambda_item, V)
        return total


@dataclass
class _Factors:
    U: np.ndarray
    V: np.ndarray


# --------------------------------------------------------------------------
# block coordinate descent

class CoordinateDescent:
    """Gauss-Seidel sweeps over users (ascending) then items (ascending)."""

    def __init__(self, ds: RatingDataset, hp: Hyperparameters, terms: Sequence = ()):
        self.ds = ds
        self.hp = hp
        a, b = hp.fit_confidence(ds.mode)
        self.fit = FitTerm(ds, a, b)
        self.terms = list(terms)

    def _all_terms(self):
        return [self.fit, *self.terms]

    def prepare_users(self, model: FactorModel):
        for t in self._all_terms():
            t.prepare_users(model.U, model.V)

    def prepare_items(self, model: FactorModel):
        for t in self._all_terms():
            t.prepare_items(model.U, model.V)

    def user_system(self, i: int, model: FactorModel) -> tuple[np.ndarray, np.ndarray]:
        K = model.K
        A = self.hp.lambda_U * np.eye(K)
        rhs = self.hp.lambda_U * model.mu_U[:, i].copy()
        for t in self._all_terms():
            t.add_user_system(i, model.U, model.V, A, rhs)
        return A, rhs

    def item_system(self, j: int, model: FactorModel) -> tuple[np.ndarray, np.ndarray]:
        K = model.K
        A = self.hp.lambda_V * np.eye(K)
        rhs = self.hp.lambda_V * model.mu_V[:, j].copy()
        for t in self._all_terms():
            t.add_item_system(j, model.U, model.V, A, rhs)
        return A, rhs

    @staticmethod
    def solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(rhs))):
            raise NumericalError("non-finite entries in update system")
        return la.cho_solve(la.cho_factor(A, lower=True, check_finite=False), rhs, check_finite=False)

    def update_user(self, i: int, model: FactorModel) -> np.ndarray:
        return self.solve(*self.user_system(i, model))

    def update_item(self, j: int, model: FactorModel) -> np.ndarray:
        return self.solve(*self.item_system(j, model))

    def gradient_user(self, i: int, model: FactorModel) -> np.ndarray:
        self.prepare_users(model)
        A, rhs = self.user_system(i, model)
        return A @ model.U[:, i] - rhs

    def gradient_item(self, j: int, model: FactorModel) -> np.ndarray:
        self.prepare_items(model)
        A, rhs = self.item_system(j, model)
        return A @ model.V[:, j] - rhs

    def objective(self, model: FactorModel) -> float:
        U, V = model.U, model.V
        du = U - model.mu_U
        dv = V - model.mu_V
        total = self.fit.value(U, V)
        for t in self.terms:
            total += t.value(U, V)
        total += 0.5 * self.hp.lambda_U * float(np.sum(du * du))
        total += 0.5 * self.hp.lambda_V * float(np.sum(dv * dv))
        return total

    def sweep(self, model: FactorModel) -> None:
        self.prepare_users(model)
        for i in range(model.num_users):
            model.U[:, i] = self.update_user(i, model)
        self.prepare_items(model)
        for j in range(model.num_items):
            model.V[:, j] = self.update_item(j, model)

    def run(self, model: FactorModel, report: TrainReport | None = None, callback=None) -> TrainReport:
        hp = self.hp
        report = report or TrainReport()
        start = time.perf_counter()
        prev = self.objective(model)
        if not np.isfinite(prev):
            raise NumericalError("initial objective is not finite")
        report.initial_objective = prev
        for it in range(hp.max_iters):
            t0 = time.perf_counter()
            self.sweep(model)
            report.sweep_times.append(time.perf_counter() - t0)
            cur = self.objective(model)
            if not np.isfinite(cur):
                raise NumericalError(f"objective became non-finite at sweep {it + 1}")
            report.objective_trace.append(cur)
            report.iterations_run = it + 1
            if callback is not None:
                callback(it, model, cur)
            rel = (prev - cur) / max(abs(prev), np.finfo(float).tiny)
            _logger.debug("sweep %d objective %.10g rel %.3g", it + 1, cur, rel)
            if rel < hp.rel_tol:
                report.converged = True
                break
            prev = cur
        report.wall_time = time.perf_counter() - start + report.setup_time
        return report


# --------------------------------------------------------------------------
# public operations

def joint_solver(ds: RatingDataset, index: SmoothnessIndex | None, hp: Hyperparameters) -> CoordinateDescent:
    terms = []
    if index is not None and (index.n_user_triples or index.n_item_triples):
        if (index.num_users, index.num_items) != (ds.num_users, ds.num_items):
            raise GraphConfigError("smoothness index was built for a different dataset shape")
        terms.append(JointSmoothnessTerm(index, hp.lambda_F, hp.lambda_G))
    return CoordinateDescent(ds, hp, terms)


def objective(model: FactorModel, ds: RatingDataset, index: SmoothnessIndex | None, hp: Hyperparameters) -> float:
    return joint_solver(ds, index, hp).objective(model)


def update_user_factor(i: int, model: FactorModel, ds: RatingDataset, index, hp: Hyperparameters) -> np.ndarray:
    """Exact minimizer of the objective in U_i with everything else fixed."""
    solver = joint_solver(ds, index, hp)
    solver.prepare_users(model)
    return solver.update_user(i, model)


def update_item_factor(j: int, model: FactorModel, ds: RatingDataset, index, hp: Hyperparameters) -> np.ndarray:
    """Exact minimizer of the objective in V_j with everything else fixed."""
    solver = joint_solver(ds, index, hp)
    solver.prepare_items(model)
    return solver.update_item(j, model)


def train(
    ds: RatingDataset,
    g_user: AffinityGraph | None,
    g_item: AffinityGraph | None,
    hp: Hyperparameters,
    mu_U=None,
    mu_V=None,
    index: SmoothnessIndex | None = None,
    model: FactorModel | None = None,
) -> tuple[FactorModel, TrainReport]:
    """Build the smoothness index once, then sweep until the relative decrease drops below ``rel_tol``."""
    for g, n, name in ((g_user, ds.num_users, "user"), (g_item, ds.num_items, "item")):
        if g is not None and g.num_nodes != n:
            raise GraphConfigError(f"{name} graph has {g.num_nodes} nodes, dataset has {n}")
    t0 = time.perf_counter()
    if index is None and (hp.lambda_F or hp.lambda_G):
        index = build_smoothness_index(g_user, g_item, ds, hp.alpha, hp.epsilon_conf)
    solver = joint_solver(ds, index, hp)
    report = TrainReport(setup_time=time.perf_counter() - t0)
    model = model if model is not None else init_model(ds, hp, mu_U, mu_V)
    solver.run(model, report)
    return model, report


def train_pairwise(
    ds: RatingDataset, pg: PairwiseGraph, hp: Hyperparameters, mu_U=None, mu_V=None,
    model: FactorModel | None = None,
) -> tuple[FactorModel, TrainReport]:
    """Same sweeps with the pairwise-graph energy in place of the joint one."""
    if (pg.num_users, pg.num_items) != (ds.num_users, ds.num_items):
        raise GraphConfigError("pairwise graph does not match dataset")
    t0 = time.perf_counter()
    solver = pairwise_solver(ds, pg, hp)
    report = TrainReport(setup_time=time.perf_counter() - t0)
    model = model if model is not None else init_model(ds, hp, mu_U, mu_V)
    solver.run(model, report)
    return model, report


def pairwise_solver(ds: RatingDataset, pg: PairwiseGraph, hp: Hyperparameters) -> CoordinateDescent:
    terms = [PairwiseSmoothnessTerm(pg, hp.lambda_P)] if pg.num_edges and hp.lambda_P else []
    return CoordinateDescent(ds, hp, terms)


def pairwise_objective(model: FactorModel, ds: RatingDataset, pg: PairwiseGraph, hp: Hyperparameters) -> float:
    return pairwise_solver(ds, pg, hp).objective(model)


def predict(model: FactorModel, i: int, j: int) -> float:
    if not (0 <= i < model.num_users and 0 <= j < model.num_items):
        raise IndexError(f"pair ({i}, {j}) outside {model.num_users} x {model.num_items}")
    return float(model.U[:, i] @ model.V[:, j])


def rank_items(scores: np.ndarray, exclude: np.ndarray, M: int | None = None) -> list[int]:
    """Candidates by descending score, ties to the lower index."""
    cand = np.setdiff1d(np.arange(len(scores)), exclude, assume_unique=False)
    order = np.lexsort((cand, -scores[cand]))
    ranked = cand[order]
    return ranked[:M].tolist() if M is not None else ranked.tolist()


def recommend_top_m(model, ds: RatingDataset, i: int, M: int) -> list[int]:
    """Top ``M`` items user ``i`` has not rated in ``ds``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    rated = ds.items[ds.users == i]
    return rank_items(model.scores(i), rated, M)
