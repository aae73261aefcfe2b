"""Run configuration documents shared by the CLI and the comparison runner.

A config is a JSON object.  Unknown keys are rejected at every level and
referenced files must exist when the config is validated.
"""
from __future__ import annotations

import dataclasses
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .affinity import AffinityGraph, build_affinity_graph, read_graph
from .dataset import (
    RatingDataset,
    TagAssignments,
    load_ratings,
    load_social,
    load_tags,
    sample_ratings,
    sample_users,
)
from .rscgm import Hyperparameters


class ConfigError(ValueError):
    """Invalid run configuration."""


METHOD_KINDS = ("bmf", "ulfr", "uilfr", "icf", "harmonic-ssl", "rscgm", "rscgm-pairwise")
_METHOD_ALIASES = {
    "ssl": ("harmonic-ssl", None),
    "pairwise1": ("rscgm-pairwise", "product"),
    "pairwise2": ("rscgm-pairwise", "min"),
    "joint": ("rscgm", None),
}
_BASELINE_KEYS = {"lambda_f", "lambda_f_item", "icf_neighbors", "hf_max_iters", "hf_tol"}
_HP_KEYS = {f.name for f in dataclasses.fields(Hyperparameters)}
_DATASET_KEYS = {
    "name", "path", "format", "mode", "social", "tags", "tag_entity_column", "tag_column",
    "topics", "synthetic",
}
_SYNTHETIC_KEYS = {"num_users", "num_items", "rank", "noise", "density", "seed", "scale", "mode"}
_GRAPH_KEYS = {"source", "path", "min_overlap", "top_k"}
_TOP_KEYS = {
    "dataset", "graphs", "hyperparameters", "methods", "metrics", "m_values", "sparsity",
    "folds", "max_folds", "seed", "record_timing",
}


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class MethodSpec:
    name: str
    kind: str
    combiner: str = "product"
    hyperparameters: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)


def _expand_method(entry) -> list[MethodSpec]:
    if isinstance(entry, str):
        entry = {"method": entry}
    if not isinstance(entry, dict):
        raise ConfigError("methods must be names or objects")
    entry = dict(entry)
    kind = entry.pop("method", None) or entry.get("name")
    label = entry.pop("name", None)
    combiner = entry.pop("combiner", None)
    if kind in _METHOD_ALIASES:
        kind, alias_comb = _METHOD_ALIASES[kind]
        combiner = combiner or alias_comb
    if kind not in METHOD_KINDS:
        raise ConfigError(f"unknown method {kind!r}; expected one of {METHOD_KINDS}")
    if combiner not in (None, "product", "min"):
        raise ConfigError(f"unknown combiner {combiner!r}")
    _check_keys(entry, _HP_KEYS | _BASELINE_KEYS, f"method {kind}")
    grid_keys = [k for k, v in entry.items() if isinstance(v, list)]
    grids = [entry[k] for k in grid_keys]
    specs = []
    for combo in itertools.product(*grids) if grid_keys else [()]:
        params = dict(entry)
        params.update(zip(grid_keys, combo))
        hp = {k: v for k, v in params.items() if k in _HP_KEYS}
        base = {k: v for k, v in params.items() if k in _BASELINE_KEYS}
        name = label or (kind if kind != "rscgm-pairwise" else f"rscgm-pairwise-{combiner or 'product'}")
        if grid_keys:
            name += "[" + ",".join(f"{k}={v}" for k, v in zip(grid_keys, combo)) + "]"
        specs.append(MethodSpec(name, kind, combiner or "product", hp, base))
    return specs


@dataclass
class RunConfig:
    dataset: dict
    graphs: dict = field(default_factory=dict)
    hyperparameters: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: ["bmf", "rscgm"])
    metrics: list | None = None
    m_values: list = field(default_factory=lambda: [10, 50])
    sparsity: list = field(default_factory=lambda: [{"remove_fraction": 0.0}])
    folds: int = 5
    max_folds: int | None = None
    seed: int = 0
    record_timing: bool = True
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> RunConfig:
        _check_keys(doc, _TOP_KEYS, "config")
        if "dataset" not in doc:
            raise ConfigError("config needs a 'dataset' section")
        cfg = cls(**doc, base_dir=Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, base_dir=path.parent)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "base_dir"}
        out["metrics"] = self.metric_list()
        return json.loads(json.dumps(out))

    def resolve(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self) -> None:
        ds = self.dataset
        _check_keys(ds, _DATASET_KEYS, "dataset")
        if "synthetic" in ds:
            _check_keys(ds["synthetic"], _SYNTHETIC_KEYS, "dataset.synthetic")
        elif "path" not in ds:
            raise ConfigError("dataset needs 'path' or 'synthetic'")
        for key in ("path", "social", "tags", "topics"):
            if key in ds and not self.resolve(ds[key]).exists():
                raise ConfigError(f"dataset.{key}: file not found: {ds[key]}")
        if ds.get("mode", "explicit") not in ("explicit", "implicit"):
            raise ConfigError("dataset.mode must be explicit or implicit")
        _check_keys(self.graphs, {"user", "item"}, "graphs")
        for entity, g in self.graphs.items():
            _check_keys(g, _GRAPH_KEYS, f"graphs.{entity}")
            if "path" in g:
                if not self.resolve(g["path"]).exists():
                    raise ConfigError(f"graphs.{entity}.path: file not found: {g['path']}")
            elif g.get("source") not in ("pcc", "rating-pcc", "jaccard", "tag-jaccard", "social", "planted"):
                raise ConfigError(f"graphs.{entity}: needs 'path' or a known 'source'")
        if not isinstance(self.methods, list) or not self.methods:
            raise ConfigError("methods must be a nonempty list")
        try:
            Hyperparameters.defaults_for(self.mode, **self.hyperparameters)
            for s in self.method_specs():
                Hyperparameters.defaults_for(self.mode, **{**self.hyperparameters, **s.hyperparameters})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"hyperparameters: {exc}") from None
        for m in self.metric_list():
            if m not in ("mae", "rmse", "precision", "recall"):
                raise ConfigError(f"unknown metric {m!r}")
        if not self.m_values or any(int(m) < 1 for m in self.m_values):
            raise ConfigError("m_values must be positive integers")
        for level in self.sparsity:
            _check_keys(level, {"remove_fraction", "max_user_ratings", "name"}, "sparsity level")
            if "remove_fraction" in level and "max_user_ratings" in level:
                raise ConfigError("a sparsity level sets remove_fraction or max_user_ratings, not both")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")

    @property
    def dataset_name(self) -> str:
        ds = self.dataset
        if "name" in ds:
            return ds["name"]
        return "synthetic" if "synthetic" in ds else Path(ds["path"]).stem

    @property
    def mode(self) -> str:
        if "synthetic" in self.dataset:
            return self.dataset["synthetic"].get("mode", "explicit")
        return self.dataset.get("mode", "explicit")

    def metric_list(self) -> list[str]:
        if self.metrics is not None:
            return list(self.metrics)
        return ["mae", "rmse"] if self.mode == "explicit" else ["precision", "recall"]

    def method_specs(self) -> list[MethodSpec]:
        return [s for entry in self.methods for s in _expand_method(entry)]

    def hyperparameters_for(self, mode: str) -> Hyperparameters:
        return Hyperparameters.defaults_for(mode, **self.hyperparameters)


def _load_topics(path: Path, num_items: int) -> np.ndarray:
    topics = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=2)
    if topics.shape[0] != num_items:
        raise ConfigError(f"{path}: expected {num_items} topic rows, found {topics.shape[0]}")
    return topics


def load_dataset(cfg: RunConfig) -> tuple[RatingDataset, dict[str, Any]]:
    """The configured ratings plus auxiliary inputs (social, tags, topics, planted factors)."""
    ds_cfg = cfg.dataset
    aux: dict[str, Any] = {}
    if "synthetic" in ds_cfg:
        from .synthetic import synthetic_low_rank

        syn = dict(ds_cfg["synthetic"])
        mode = syn.pop("mode", "explicit")
        data = synthetic_low_rank(
            syn.get("num_users", 100), syn.get("num_items", 100), syn.get("rank", 3),
            syn.get("seed", cfg.seed), syn.get("noise", 0.0), syn.get("density", 1.0),
            syn.get("scale", 1.0),
        )
        ds = data.dataset
        if mode == "implicit":
            ds = RatingDataset(ds.num_users, ds.num_items, ds.users[ds.ratings > 0],
                               ds.items[ds.ratings > 0], np.ones(int((ds.ratings > 0).sum())), "implicit")
        aux["planted"] = {"user": data.U, "item": data.V}
        return ds, aux
    ds = load_ratings(cfg.resolve(ds_cfg["path"]), ds_cfg.get("format", "generic-csv"), ds_cfg.get("mode", "explicit"))
    if "social" in ds_cfg:
        aux["social"] = load_social(cfg.resolve(ds_cfg["social"]), ds.user_ids)
    if "tags" in ds_cfg:
        aux["tags"] = load_tags(
            cfg.resolve(ds_cfg["tags"]), ds.item_ids,
            ds_cfg.get("tag_entity_column", 0), ds_cfg.get("tag_column", 1),
        )
    if "topics" in ds_cfg:
        aux["topics"] = _load_topics(cfg.resolve(ds_cfg["topics"]), ds.num_items)
    return ds, aux


def sparsity_variants(ds: RatingDataset, cfg: RunConfig):
    for n, level in enumerate(cfg.sparsity):
        if "remove_fraction" in level:
            name = level.get("name", f"remove{level['remove_fraction']:g}")
            yield name, sample_ratings(ds, float(level["remove_fraction"]), cfg.seed + n)
        elif "max_user_ratings" in level:
            name = level.get("name", f"maxuser{level['max_user_ratings']}")
            yield name, sample_users(ds, int(level["max_user_ratings"]))
        else:
            yield level.get("name", "full"), ds


def build_graphs(cfg: RunConfig, train_ds: RatingDataset, aux: dict) -> dict[str, AffinityGraph]:
    """Graphs named in the config; similarity graphs are computed from ``train_ds``."""
    graphs = {}
    for entity, g in cfg.graphs.items():
        if "path" in g:
            graph = read_graph(cfg.resolve(g["path"]))
            if graph.entity != entity:
                raise ConfigError(f"graphs.{entity}: file holds a {graph.entity} graph")
            graphs[entity] = graph
            continue
        source = g["source"]
        top_k = g.get("top_k", 50)
        if source == "planted":
            from .synthetic import planted_graph

            if "planted" not in aux:
                raise ConfigError("planted graphs need a synthetic dataset")
            graphs[entity] = planted_graph(aux["planted"][entity], entity, top_k)
            continue
        extra = None
        if source == "social":
            extra = aux.get("social")
            if extra is None:
                raise ConfigError("social graph needs dataset.social")
        elif source in ("jaccard", "tag-jaccard"):
            extra = aux.get("tags")
            if not isinstance(extra, TagAssignments):
                raise ConfigError("jaccard graph needs dataset.tags")
        graphs[entity] = build_affinity_graph(
            train_ds, entity, source, g.get("min_overlap", 3), top_k, extra
        )
    return graphs
