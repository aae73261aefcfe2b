"""Held-out RMSE of BMF and RSCGM on planted low-rank data as ratings are masked."""
import argparse
import json

import numpy as np

from chainrec.baselines import train_bmf
from chainrec.dataset import RatingDataset
from chainrec.rscgm import Hyperparameters, train
from chainrec.synthetic import planted_graph, synthetic_low_rank


def run(seed, masked, args, hp):
    data = synthetic_low_rank(args.size, args.size, args.rank, seed, noise=args.noise)
    rng = np.random.default_rng(10_000 + seed)
    observed = rng.random((args.size, args.size)) >= masked
    users, items = np.nonzero(observed)
    ds = RatingDataset(args.size, args.size, users, items, data.R[users, items])
    g_user = planted_graph(data.U, "user", args.top_k)
    g_item = planted_graph(data.V, "item", args.top_k)
    out = {}
    for name, model in (("bmf", train_bmf(ds, hp)[0]), ("rscgm", train(ds, g_user, g_item, hp)[0])):
        out[name] = float(np.sqrt(np.mean(((model.U.T @ model.V) - data.R)[~observed] ** 2)))
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--size", type=int, default=100)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--lam", type=float, default=0.03, help="lambda_F = lambda_G")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--masked", type=float, nargs="+", default=[0.5, 0.7, 0.8, 0.9, 0.95])
    args = p.parse_args()
    hp = Hyperparameters(K=args.rank, lambda_U=0.1, lambda_V=0.1, lambda_F=args.lam, lambda_G=args.lam,
                         alpha=0.5, max_iters=100, rel_tol=1e-5)
    rows = []
    for masked in args.masked:
        runs = [run(s, masked, args, hp) for s in range(args.seeds)]
        med = {k: float(np.median([r[k] for r in runs])) for k in ("bmf", "rscgm")}
        rows.append({"masked": masked, **med})
        print(f"masked {masked:.2f}  BMF {med['bmf']:.4f}  RSCGM {med['rscgm']:.4f}", flush=True)
    print(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
