"""Track how much weight each FedSmart client puts on itself, its designated
pair, and the best other peer, round by round.

    python scripts/weight_trajectory.py --seed 0 --every 10
"""

import argparse

import numpy as np

from fedsim.config import load_config
from fedsim.data import designated_pair
from fedsim.engine import run_experiment
from fedsim.report import pairing_hits


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=10)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    cfg = load_config(None, args.set + [f"master_seed={args.seed}", "strategy=fedsmart"])
    records = run_experiment(cfg)
    n = cfg.n_clients
    print("round  client  self    pair    best-other  hit")
    for rec in records:
        if rec.round % args.every and rec.round != len(records) - 1:
            continue
        hits = pairing_hits(rec.weights)
        for i in range(n):
            j = designated_pair(i, n)
            others = [rec.weights[i, k] for k in range(n) if k not in (i, j)]
            best = max(others) if others else float("nan")
            print(f"{rec.round:5d}  {i:6d}  {rec.weights[i, i]:.3f}   {rec.weights[i, j]:.3f}   "
                  f"{best:.3f}       {'y' if hits[i] else '.'}")
    final = records[-1].weights
    print("final weight matrix:")
    print(np.array2string(final, precision=3, suppress_small=True))


if __name__ == "__main__":
    main()
