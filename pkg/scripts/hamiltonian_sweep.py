"""Certify Hamiltonian paths through the relaxation on random graphs.

    python3 scripts/hamiltonian_sweep.py --count 200 --max-n 7 --p 0.5
"""
import argparse

import numpy as np
import torch

from permlp.oracle import check_hamiltonian, random_graph


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--max-n", type=int, default=7)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    torch.set_num_threads(1)
    rng = np.random.default_rng(args.seed)
    has_path = certified = false_cert = 0
    for _ in range(args.count):
        n = int(rng.integers(2, args.max_n + 1))
        res = check_hamiltonian(random_graph(n, args.p, rng), n, restarts=args.restarts)
        has_path += res.brute_force
        certified += res.brute_force and res.solver_path is not None
        false_cert += (not res.brute_force) and res.solver_path is not None
    print(f"graphs {args.count}, with a Hamiltonian path {has_path}, certified {certified} "
          f"({certified / max(has_path, 1):.1%}), false certificates {false_cert}")


if __name__ == "__main__":
    main()
