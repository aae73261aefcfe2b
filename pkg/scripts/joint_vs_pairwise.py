"""Setup plus one-sweep cost of the joint model against the pairwise-graph model."""
import argparse
import time

import numpy as np

from chainrec.affinity import AffinityGraph, build_pairwise_graph
from chainrec.rscgm import Hyperparameters, init_model, joint_solver, pairwise_solver
from chainrec.smoothness import build_smoothness_index
from chainrec.synthetic import synthetic_low_rank


def complete_graph(n, entity, rng):
    edges = [(a, b, float(rng.uniform(0.1, 1.0))) for a in range(n) for b in range(a + 1, n)]
    return AffinityGraph.from_edges(n, edges, entity)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[20, 40, 60])
    p.add_argument("--density", type=float, default=0.2)
    args = p.parse_args()
    hp = Hyperparameters(K=3, lambda_P=0.1)
    for n in args.sizes:
        rng = np.random.default_rng(0)
        ds = synthetic_low_rank(n, n, 3, 0, density=args.density).dataset
        g_user, g_item = complete_graph(n, "user", rng), complete_graph(n, "item", rng)
        t0 = time.perf_counter()
        idx = build_smoothness_index(g_user, g_item, ds, hp.alpha, hp.epsilon_conf)
        joint_solver(ds, idx, hp).sweep(init_model(ds, hp))
        t_joint = time.perf_counter() - t0
        t0 = time.perf_counter()
        pg = build_pairwise_graph(g_user, g_item, "product", ds)
        pairwise_solver(ds, pg, hp).sweep(init_model(ds, hp))
        t_pair = time.perf_counter() - t0
        print(f"I=J={n:4d}  joint {t_joint:8.3f}s  pairwise {t_pair:8.3f}s ({pg.num_edges} edges)  "
              f"ratio {t_pair / t_joint:6.1f}", flush=True)


if __name__ == "__main__":
    main()
