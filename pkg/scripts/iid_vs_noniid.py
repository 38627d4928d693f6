"""FedSmart and FedAvg on the paired non-IID split and on an IID split.

    python scripts/iid_vs_noniid.py --seeds 10
"""

import argparse

import numpy as np

from fedsim.config import load_config
from fedsim.engine import run_experiment


def final_mean(cfg):
    return float(np.mean(run_experiment(cfg)[-1].val_accuracy))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    base = load_config(None, args.set)
    cols = [(s, h) for h in ("paired_noniid", "iid") for s in ("fedsmart", "fedavg")]
    print("seed  " + "  ".join(f"{s + '/' + h[:3]:<17}" for s, h in cols))
    table = []
    for seed in range(args.seeds):
        row = [final_mean(base.replace(strategy=s, heterogeneity=h, master_seed=seed)) for s, h in cols]
        table.append(row)
        print(f"{seed:4d}  " + "  ".join(f"{v:<17.4f}" for v in row))
    print("mean  " + "  ".join(f"{v:<17.4f}" for v in np.mean(table, axis=0)))


if __name__ == "__main__":
    main()
