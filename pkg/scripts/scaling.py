"""Per-sweep wall time of the joint model as the number of ratings grows."""
import argparse
import time

import numpy as np
from scipy import stats

from chainrec.rscgm import Hyperparameters, init_model, joint_solver
from chainrec.smoothness import build_smoothness_index
from chainrec.synthetic import planted_graph, synthetic_low_rank


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--ratings", type=int, nargs="+", default=[2000, 4000, 8000, 16000, 32000])
    p.add_argument("--density", type=float, default=0.05)
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args()
    hp = Hyperparameters(K=args.K, alpha=0.5)
    counts, times = [], []
    for L in args.ratings:
        n = int(round(np.sqrt(L / args.density)))
        data = synthetic_low_rank(n, n, 3, 0, density=L / (n * n))
        ds = data.dataset
        idx = build_smoothness_index(planted_graph(data.U, "user", args.top_k),
                                     planted_graph(data.V, "item", args.top_k), ds, hp.alpha, hp.epsilon_conf)
        solver = joint_solver(ds, idx, hp)
        m = init_model(ds, hp)
        best = np.inf
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            solver.sweep(m)
            best = min(best, time.perf_counter() - t0)
        counts.append(len(ds))
        times.append(best)
        print(f"ratings {len(ds):7d}  users=items {n:5d}  sweep {best * 1000:8.1f} ms", flush=True)
    fit = stats.linregress(counts, times)
    print(f"linear fit: {fit.slope * 1e6:.2f} us/rating, R^2 {fit.rvalue ** 2:.4f}")


if __name__ == "__main__":
    main()
