"""Rounded solver objective against the brute-force optimum on random score bundles.

    python3 scripts/solver_vs_oracle.py --count 200 --tau 0.05 --sweeps 100
"""
import argparse
import time
from collections import defaultdict

import numpy as np
import torch

from permlp import bregman
from permlp.bregman import SolverConfig
from permlp.oracle import brute_force_qap
from permlp.perm_scores import ScoreBundle
from permlp.rounding import round_solution


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--max-n", type=int, default=6)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--sweeps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    torch.set_num_threads(1)
    rng = np.random.default_rng(args.seed)
    by_n = defaultdict(lambda: [0, 0, 0])      # instances, within 2%, exactly optimal
    t0 = time.perf_counter()
    for _ in range(args.count):
        n = int(rng.integers(2, args.max_n + 1))
        sb = ScoreBundle.random(n, rng, tau=args.tau)
        with torch.no_grad():
            sp = bregman.solve(sb, SolverConfig(max_sweeps=args.sweeps))
        got, opt = round_solution(sp.u, sb).value, brute_force_qap(sb).value
        row = by_n[n]
        row[0] += 1
        row[1] += got >= opt - 0.02 * abs(opt) - 1e-12
        row[2] += got >= opt - 1e-9
    print(f"{'n':>3} {'count':>6} {'within 2%':>10} {'optimal':>8}")
    for n in sorted(by_n):
        c, w, o = by_n[n]
        print(f"{n:>3} {c:>6} {w / c:>10.3f} {o / c:>8.3f}")
    tot = np.array(list(by_n.values())).sum(0)
    print(f"all {tot[0]:>6} {tot[1] / tot[0]:>10.3f} {tot[2] / tot[0]:>8.3f}"
          f"   ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
