"""Train and evaluate the doubling experiment for one or more seeds.

    python3 scripts/run_doubling.py --out-dir runs/doubling --seeds 0 1
"""
import argparse
import logging

import torch

from permlp.config import PermConfig, TaggerConfig
from permlp.experiments import run_doubling


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    p.add_argument("--tagger-epochs", type=int, default=TaggerConfig.epochs)
    p.add_argument("--perm-epochs", type=int, default=PermConfig.epochs)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    for seed in args.seeds:
        res = run_doubling(f"{args.out_dir}/seed{seed}", seed,
                           tagger_cfg=TaggerConfig(epochs=args.tagger_epochs),
                           perm_cfg=PermConfig(epochs=args.perm_epochs))
        print(f"seed {seed}: length 11 {res.accuracy(11):.4f}, "
              f"mean 11-16 {res.mean_accuracy(11, 16):.4f}, "
              f"training {res.train_cpu_seconds / 60:.1f} CPU min")
        for r in res.rows:
            print(f"  length {r.length:2d}  exact match {r.exact_match:.4f}")


if __name__ == "__main__":
    main()
