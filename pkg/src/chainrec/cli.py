"""Command-line front end.

Exit codes: 0 success, 1 I/O or input-data error, 2 configuration error,
3 numerical failure.  Randomized steps use numpy's PCG64 generator
(``numpy.random.default_rng``) seeded from the flags or config.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .affinity import GraphConfigError, build_affinity_graph, build_pairwise_graph, write_graph
from .baselines import BaselineConfig, lfr_solver, train_bmf
from .config import ConfigError, RunConfig, build_graphs, load_dataset
from .dataset import DatasetError, load_ratings, load_social, load_tags, sample_ratings, sample_users, save_ratings
from .evaluation import evaluate_ranking_model, evaluate_rating_model, run_comparison
from .rscgm import (
    Hyperparameters,
    NumericalError,
    init_model,
    load_checkpoint,
    save_checkpoint,
    topic_prior,
    train,
    train_pairwise,
)

_logger = logging.getLogger("chainrec")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
TRAIN_METHODS = ("rscgm", "bmf", "ulfr", "uilfr", "rscgm-pairwise")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_data_flags(p, input_flag="--input", required=True):
    p.add_argument(input_flag, required=required, help="rating file")
    p.add_argument("--format", default="generic-csv",
                   choices=("generic-csv", "hetrec-tsv", "movielens-colons"),
                   help="rating file layout (default: %(default)s)")
    p.add_argument("--mode", default="explicit", choices=("explicit", "implicit"),
                   help="explicit ratings or binary implicit feedback (default: %(default)s)")


def _parse_set(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chainrec", description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("build-graph", help="build a user or item affinity graph", formatter_class=fmt)
    _add_data_flags(p)
    p.add_argument("--entity", required=True, choices=("user", "item"), help="graph over users or items")
    p.add_argument("--source", required=True, choices=("pcc", "jaccard", "social"),
                   help="similarity source")
    p.add_argument("--social", help="user-id pair file (social source)")
    p.add_argument("--tags", help="entity/tag pair file (jaccard source)")
    p.add_argument("--tag-columns", default="0,1", help="entity and tag column indices in --tags")
    p.add_argument("--top-k", type=int, default=50, help="neighbours kept per node; 0 disables pruning")
    p.add_argument("--min-overlap", type=int, default=3, help="minimum co-ratings for PCC")
    p.add_argument("--out", required=True, help="edge-list output file")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train a factor model and write a checkpoint", formatter_class=fmt)
    p.add_argument("--config", required=True, help="JSON run config (dataset, graphs, hyperparameters)")
    p.add_argument("--method", default="rscgm", choices=TRAIN_METHODS, help="model to train")
    p.add_argument("--combiner", default="product", choices=("product", "min"),
                   help="pairwise graph combiner (rscgm-pairwise)")
    p.add_argument("--lambda-f", type=float, default=0.1, help="LFR strength (ulfr/uilfr)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="hyperparameter override")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--report", help="train report path (default: OUT.report.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on held-out ratings", formatter_class=fmt)
    p.add_argument("--model", required=True, help="checkpoint file")
    _add_data_flags(p, "--train")
    p.add_argument("--test", required=True, help="held-out rating file (same format and mode)")
    p.add_argument("--m-values", default="10,50", help="comma separated list sizes for precision/recall")
    p.add_argument("--metrics", default=None,
                   help="comma separated subset of mae,rmse,precision,recall (default by mode)")
    p.add_argument("--out", help="JSON report path (default: stdout only)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="cross-validated comparison across sparsity levels and methods",
                       formatter_class=fmt)
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--csv", help="plot-ready per-cell CSV path")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="parallel fold workers")
    p.add_argument("--no-timing", action="store_true", help="omit wall times so reports are byte-stable")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sample", help="write a sparsified copy of a rating file", formatter_class=fmt)
    _add_data_flags(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--remove-fraction", type=float, help="fraction of ratings removed at random")
    g.add_argument("--max-user-ratings", type=int, help="drop users with more ratings than this")
    p.add_argument("--seed", type=int, default=0, help="PCG64 seed for --remove-fraction")
    p.add_argument("--out", required=True, help="output rating file (generic-csv)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", help="write a planted low-rank dataset and its factor graphs", formatter_class=fmt)
    p.add_argument("--users", type=int, default=100)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


# --------------------------------------------------------------------------
# subcommands

def cmd_build_graph(args) -> int:
    ds = load_ratings(args.input, args.format, args.mode)
    aux = None
    if args.source == "social":
        if not args.social:
            raise ConfigError("--source social needs --social")
        aux = load_social(args.social, ds.user_ids)
    elif args.source == "jaccard":
        if not args.tags:
            raise ConfigError("--source jaccard needs --tags")
        ecol, tcol = (int(c) for c in args.tag_columns.split(","))
        ids = ds.user_ids if args.entity == "user" else ds.item_ids
        aux = load_tags(args.tags, ids, ecol, tcol)
    graph = build_affinity_graph(ds, args.entity, args.source, args.min_overlap, args.top_k or None, aux)
    write_graph(graph, args.out)
    print(f"{graph.entity} graph: {graph.num_nodes} nodes, {graph.num_edges} edges -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    ds, aux = load_dataset(cfg)
    overrides = {**cfg.hyperparameters, **_parse_set(args.set)}
    try:
        hp = Hyperparameters.defaults_for(ds.mode, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    graphs = build_graphs(cfg, ds, aux)
    mu_V = topic_prior(aux["topics"], hp.K) if "topics" in aux else None
    g_user, g_item = graphs.get("user"), graphs.get("item")
    if args.method == "rscgm":
        model, report = train(ds, g_user, g_item, hp, mu_V=mu_V)
    elif args.method == "bmf":
        model, report = train_bmf(ds, hp, mu_V=mu_V)
    elif args.method == "rscgm-pairwise":
        if g_user is None or g_item is None:
            raise ConfigError("rscgm-pairwise needs user and item graphs in the config")
        model, report = train_pairwise(ds, build_pairwise_graph(g_user, g_item, args.combiner, ds), hp, mu_V=mu_V)
    else:
        bcfg = BaselineConfig(method=args.method, lambda_f=args.lambda_f)
        solver = lfr_solver(ds, g_user, g_item, bcfg, hp)
        model = init_model(ds, hp, mu_V=mu_V)
        report = solver.run(model)
    save_checkpoint(model, args.out)
    doc = {
        "method": args.method,
        "dataset": cfg.dataset_name,
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "num_ratings": len(ds),
        "hyperparameters": hp.to_dict(),
        "final_objective": report.objective_trace[-1] if report.objective_trace else report.initial_objective,
        **report.to_dict(),
    }
    report_path = args.report or f"{args.out}.report.json"
    Path(report_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{args.method}: {report.iterations_run} sweeps, objective {doc['final_objective']:.6g}, "
          f"converged={report.converged} -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.model)
    train_ds = load_ratings(args.train, args.format, args.mode)
    if (model.num_users, model.num_items) != (train_ds.num_users, train_ds.num_items):
        raise ConfigError(
            f"checkpoint is {model.num_users} x {model.num_items}, training data is "
            f"{train_ds.num_users} x {train_ds.num_items}"
        )
    test_ds = load_ratings(args.test, args.format, args.mode, train_ds.user_ids, train_ds.item_ids)
    metrics = args.metrics.split(",") if args.metrics else (
        ["mae", "rmse"] if train_ds.mode == "explicit" else ["precision", "recall"])
    out: dict = {"model": str(args.model), "test_size": len(test_ds)}
    if {"mae", "rmse"} & set(metrics):
        m_abs, m_sq = evaluate_rating_model(model, test_ds)
        out.update({k: v for k, v in (("mae", m_abs), ("rmse", m_sq)) if k in metrics})
    if {"precision", "recall"} & set(metrics):
        m_values = [int(m) for m in args.m_values.split(",")]
        out.update(evaluate_ranking_model(model, train_ds, test_ds, m_values).to_dict())
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.no_timing:
        cfg.record_timing = False
    report = run_comparison(cfg, threads=max(1, args.threads))
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    print(report.table(), end="")
    failed = sum(c["status"] != "ok" for c in report.cells)
    if failed:
        print(f"{failed} of {len(report.cells)} cells failed; see report for errors", file=sys.stderr)
    return EXIT_OK


def cmd_sample(args) -> int:
    ds = load_ratings(args.input, args.format, args.mode)
    if args.remove_fraction is not None:
        out = sample_ratings(ds, args.remove_fraction, args.seed)
    else:
        out = sample_users(ds, args.max_user_ratings)
    if out is ds:
        shutil.copyfile(args.input, args.out)
    else:
        save_ratings(out, args.out)
    print(f"kept {len(out)} of {len(ds)} ratings -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import planted_graph, synthetic_low_rank

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = synthetic_low_rank(args.users, args.items, args.rank, args.seed, args.noise, args.density)
    save_ratings(data.dataset, out / "ratings.csv")
    write_graph(planted_graph(data.U, "user", args.top_k), out / "user_graph.txt")
    write_graph(planted_graph(data.V, "item", args.top_k), out / "item_graph.txt")
    np.save(out / "true_ratings.npy", data.R)
    print(f"{len(data.dataset)} ratings over {args.users} x {args.items} -> {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GraphConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
