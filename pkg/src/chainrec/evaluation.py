"""Rating / ranking metrics and the cross-validated comparison runner."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .affinity import AffinityGraph, build_pairwise_graph
from .baselines import BaselineConfig, ICFPredictor, train_bmf, train_harmonic_ssl, train_lfr
from .config import MethodSpec, RunConfig, build_graphs, load_dataset, sparsity_variants
from .dataset import RatingDataset, kfold
from .rscgm import Hyperparameters, rank_items, topic_prior, train, train_pairwise

_logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


def _pairs(preds) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(list(preds) if not isinstance(preds, np.ndarray) else preds, dtype=np.float64)
    if arr.size == 0:
        raise EvaluationError("cannot score an empty prediction list")
    arr = arr.reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def mae(preds) -> float:
    """Mean absolute error over (truth, estimate) pairs."""
    truth, est = _pairs(preds)
    return float(np.mean(np.abs(truth - est)))


def rmse(preds) -> float:
    truth, est = _pairs(preds)
    return float(np.sqrt(np.mean((truth - est) ** 2)))


def precision_recall_at_m(recommended: Sequence, liked: Iterable, M: int) -> tuple[float, float]:
    """Hits in the first M recommendations over M (precision) and over |liked| (recall)."""
    if M < 1:
        raise EvaluationError("M must be >= 1")
    liked = set(liked)
    hits = len(set(list(recommended)[:M]) & liked)
    recall = hits / len(liked) if liked else 0.0
    return hits / M, recall


def evaluate_rating_model(model, test: RatingDataset) -> tuple[float, float]:
    """(MAE, RMSE) of ``model.predict_many`` over every test triple."""
    if len(test) == 0:
        raise EvaluationError("test set is empty")
    est = model.predict_many(test.users, test.items)
    pairs = np.column_stack([test.ratings, est])
    return mae(pairs), rmse(pairs)


@dataclass
class RankingResult:
    precision: dict[int, float]
    recall: dict[int, float]
    n_users: int
    n_excluded: int

    @property
    def no_evaluable_users(self) -> bool:
        return self.n_users == 0

    def to_dict(self) -> dict:
        out = {}
        for M in sorted(self.precision):
            out[f"precision@{M}"] = self.precision[M]
            out[f"recall@{M}"] = self.recall[M]
        out["evaluated_users"] = self.n_users
        out["excluded_users"] = self.n_excluded
        return out


def evaluate_ranking_model(model, train: RatingDataset, test: RatingDataset, m_values: Sequence[int]) -> RankingResult:
    """Average per-user precision/recall over users holding at least one test item.

    Candidates are the items the user has not rated in ``train``; every test
    item of a user counts as liked.
    """
    m_values = sorted(set(int(m) for m in m_values))
    if not m_values or m_values[0] < 1:
        raise EvaluationError("m_values must be positive")
    top = m_values[-1]
    liked_by_user: dict[int, set] = {}
    for u, j in zip(test.users.tolist(), test.items.tolist()):
        liked_by_user.setdefault(u, set()).add(j)
    R = train.to_csr()
    prec = {M: 0.0 for M in m_values}
    rec = {M: 0.0 for M in m_values}
    n = 0
    for u in sorted(liked_by_user):
        liked = liked_by_user[u]
        rated = R.indices[R.indptr[u]:R.indptr[u + 1]]
        ranked = rank_items(np.asarray(model.scores(u), dtype=np.float64), rated, top)
        for M in m_values:
            p, r = precision_recall_at_m(ranked, liked, M)
            prec[M] += p
            rec[M] += r
        n += 1
    excluded = int(np.sum(np.bincount(test.users, minlength=test.num_users) == 0)) if test.num_users else 0
    if n:
        prec = {M: v / n for M, v in prec.items()}
        rec = {M: v / n for M, v in rec.items()}
    else:
        _logger.warning("no evaluable users: every user lacks liked test items")
    return RankingResult(prec, rec, n, excluded)


# --------------------------------------------------------------------------
# method dispatch

def fit_method(spec: MethodSpec, train_ds: RatingDataset, graphs: dict, hp: Hyperparameters, topics=None):
    """Train one method on ``train_ds``; returns (predictor, train-report dict or None)."""
    hp = hp.replace(**spec.hyperparameters) if spec.hyperparameters else hp
    mu_V = topic_prior(topics, hp.K) if topics is not None else None
    g_user: AffinityGraph | None = graphs.get("user")
    g_item: AffinityGraph | None = graphs.get("item")
    kind = spec.kind
    if kind == "bmf":
        model, report = train_bmf(train_ds, hp, mu_V=mu_V)
        return model, report.to_dict()
    if kind in ("ulfr", "uilfr"):
        cfg = BaselineConfig(method=kind, **spec.baseline)
        model, report = train_lfr(train_ds, g_user, g_item if kind == "uilfr" else None, cfg, hp, mu_V=mu_V)
        return model, report.to_dict()
    if kind == "icf":
        cfg = BaselineConfig(method="icf", **spec.baseline)
        return ICFPredictor(train_ds, g_item, cfg.icf_neighbors), None
    if kind == "harmonic-ssl":
        cfg = BaselineConfig(method="harmonic-ssl", **spec.baseline)
        pred = train_harmonic_ssl(train_ds, g_item, cfg)
        return pred, {"iterations_run": pred.iterations, "converged": pred.converged}
    if kind == "rscgm":
        model, report = train(train_ds, g_user, g_item, hp, mu_V=mu_V)
        return model, report.to_dict()
    if kind == "rscgm-pairwise":
        pg = build_pairwise_graph(g_user, g_item, spec.combiner, train_ds)
        model, report = train_pairwise(train_ds, pg, hp, mu_V=mu_V)
        return model, report.to_dict()
    raise EvaluationError(f"unknown method {spec.name!r}")


# --------------------------------------------------------------------------
# comparison runner

@dataclass
class EvalReport:
    config: dict
    cells: list[dict] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"config": self.config, "cells": self.cells, "aggregates": self.aggregates}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def metric_names(self) -> list[str]:
        names: list[str] = []
        for agg in self.aggregates:
            for k in agg["metrics"]:
                if k not in names:
                    names.append(k)
        return names

    def table(self) -> str:
        """Methods as rows, (sparsity, metric) as columns."""
        metrics = [m for m in self.metric_names() if not m.endswith("_users")]
        levels = []
        for agg in self.aggregates:
            key = (agg["dataset"], agg["sparsity"])
            if key not in levels:
                levels.append(key)
        methods = []
        for agg in self.aggregates:
            if agg["method"] not in methods:
                methods.append(agg["method"])
        lookup = {(a["dataset"], a["sparsity"], a["method"]): a for a in self.aggregates}
        header = ["method"] + [f"{d}/{s}:{m}" for d, s in levels for m in metrics]
        rows = [header]
        for meth in methods:
            row = [meth]
            for d, s in levels:
                agg = lookup.get((d, s, meth))
                for m in metrics:
                    v = agg["metrics"].get(m) if agg else None
                    row.append("-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}")
            rows.append(row)
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        metrics = self.metric_names()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dataset", "sparsity", "method", "fold", "status", "seconds", *metrics])
        for c in self.cells:
            writer.writerow([
                c["dataset"], c["sparsity"], c["method"], c["fold"], c["status"],
                "" if c.get("seconds") is None else f"{c['seconds']:.6f}",
                *("" if c["metrics"].get(m) is None else repr(c["metrics"][m]) for m in metrics),
            ])
        return buf.getvalue()


def _cell_metrics(predictor, train_ds: RatingDataset, test_ds: RatingDataset, cfg: RunConfig) -> dict:
    out = {}
    metrics = cfg.metric_list()
    if any(m in metrics for m in ("mae", "rmse")):
        m_abs, m_sq = evaluate_rating_model(predictor, test_ds)
        if "mae" in metrics:
            out["mae"] = m_abs
        if "rmse" in metrics:
            out["rmse"] = m_sq
    if any(m in metrics for m in ("precision", "recall")):
        res = evaluate_ranking_model(predictor, train_ds, test_ds, cfg.m_values)
        for M in sorted(res.precision):
            if "precision" in metrics:
                out[f"precision@{M}"] = res.precision[M]
            if "recall" in metrics:
                out[f"recall@{M}"] = res.recall[M]
        out["evaluated_users"] = res.n_users
        out["excluded_users"] = res.n_excluded
    return out


def run_comparison(cfg: RunConfig, threads: int = 1, progress=None) -> EvalReport:
    """Every sparsity level x method x fold: train on the fold, score its held-out part.

    Graphs are rebuilt from each fold's training ratings.  A failing cell is
    recorded with its error and the run continues.
    """
    base, aux = load_dataset(cfg)
    hp = cfg.hyperparameters_for(base.mode)
    jobs = []
    for level_name, ds in sparsity_variants(base, cfg):
        folds = kfold(ds, cfg.folds, cfg.seed)
        for split in folds[: cfg.max_folds or len(folds)]:
            jobs.append((level_name, split))

    def run_fold(job):
        level_name, split = job
        cells = []
        try:
            graphs = build_graphs(cfg, split.train, aux)
            graph_error = None
        except Exception as exc:  # recorded per cell
            graphs, graph_error = {}, f"{type(exc).__name__}: {exc}"
        for spec in cfg.method_specs():
            cell = {
                "dataset": cfg.dataset_name,
                "sparsity": level_name,
                "method": spec.name,
                "fold": split.fold_index,
                "train_size": len(split.train),
                "test_size": len(split.test),
            }
            t0 = time.perf_counter()
            try:
                if graph_error:
                    raise RuntimeError(graph_error)
                predictor, _ = fit_method(spec, split.train, graphs, hp, aux.get("topics"))
                cell["metrics"] = _cell_metrics(predictor, split.train, split.test, cfg)
                cell["status"] = "ok"
            except Exception as exc:
                _logger.warning("cell %s/%s/fold %d failed: %s", level_name, spec.name, split.fold_index, exc)
                cell["metrics"] = {}
                cell["status"] = "failed"
                cell["error"] = f"{type(exc).__name__}: {exc}"
            cell["seconds"] = time.perf_counter() - t0 if cfg.record_timing else None
            cells.append(cell)
            if progress:
                progress(cell)
        return cells

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_fold, jobs))
    else:
        results = [run_fold(j) for j in jobs]
    cells = [c for group in results for c in group]
    return EvalReport(config=cfg.to_dict(), cells=cells, aggregates=aggregate(cells))


def aggregate(cells: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for c in cells:
        groups.setdefault((c["dataset"], c["sparsity"], c["method"]), []).append(c)
    out = []
    for (dataset, sparsity, method), members in groups.items():
        ok = [c for c in members if c["status"] == "ok"]
        names: list[str] = []
        for c in ok:
            names += [k for k in c["metrics"] if k not in names]
        metrics = {}
        for name in names:
            vals = [c["metrics"][name] for c in ok if name in c["metrics"]]
            metrics[name] = float(np.mean(vals)) if vals else None
        secs = [c["seconds"] for c in ok if c.get("seconds") is not None]
        out.append({
            "dataset": dataset,
            "sparsity": sparsity,
            "method": method,
            "folds": len(ok),
            "failed": len(members) - len(ok),
            "metrics": metrics,
            "seconds": float(np.mean(secs)) if secs else None,
        })
    return out
