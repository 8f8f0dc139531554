"""Brute-force references used to check the fast paths."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
import torch

from . import bregman
from .bregman import SolverConfig
from .perm_scores import ScoreBundle
from .rounding import Permutation, eval_objective, round_solution

MAX_PERM_N = 8
MAX_ASSIGNMENTS = 10 ** 6


def all_objectives(scores: ScoreBundle):
    """Every permutation of range(n) in lexicographic order and its objective."""
    n = scores.n
    if n > MAX_PERM_N:
        raise ValueError(f"brute force refused for n={n} > {MAX_PERM_N}")
    start, end, jump, _ = scores.numpy()
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    vals = start[perms[:, 0]] + end[perms[:, -1]]
    if n > 1:
        vals = vals + jump[perms[:, :-1], perms[:, 1:]].sum(1)
    return perms, vals


def brute_force_qap(scores: ScoreBundle) -> Permutation:
    perms, vals = all_objectives(scores)
    best = int(np.argmax(vals))          # first maximum = lexicographically smallest
    return Permutation(tuple(int(i) for i in perms[best]), float(vals[best]))


# -- Hamiltonian path reduction ------------------------------------------------


def hamiltonian_scores(edges: Iterable[Tuple[int, int]], n: int, directed: bool = False,
                       tau: float = 1.0) -> ScoreBundle:
    """Jump score 1 on every edge, 0 elsewhere; no start or end preference."""
    jump = np.zeros((n, n))
    for k, i in edges:
        jump[k, i] = 1.0
        if not directed:
            jump[i, k] = 1.0
    return ScoreBundle.from_numpy(np.zeros(n), np.zeros(n), jump, tau)


def is_hamiltonian_path(order, edges, n, directed=False) -> bool:
    e = set(map(tuple, edges))
    if not directed:
        e |= {(b, a) for a, b in e}
    return sorted(order) == list(range(n)) and all(
        (order[t], order[t + 1]) in e for t in range(n - 1))


@dataclass
class HamiltonianCheck:
    solver_path: Optional[Tuple[int, ...]]   # certified by the relaxation, else None
    brute_force: bool                        # a Hamiltonian path exists
    solver_score: float


def check_hamiltonian(edges, n, directed=False, taus=(0.1, 0.05), max_sweeps=300,
                      restarts=8, seed=0) -> HamiltonianCheck:
    """Try to certify a Hamiltonian path through the relaxed solver.

    Each attempt adds small random start/end/jump noise (symmetric graphs
    otherwise give tied, unroundable solutions), solves, rounds, and scores
    the rounded order on the unperturbed reduction. A path is reported only
    after checking each of its edges in the graph.
    """
    if n > MAX_PERM_N:
        raise ValueError(f"n={n} exceeds brute-force limit {MAX_PERM_N}")
    edges = [tuple(e) for e in edges]
    exact = hamiltonian_scores(edges, n, directed)
    rng = np.random.default_rng(seed)
    start, end, jump, _ = exact.numpy()
    # every (restart, tau) attempt is solved at once as a batch; noise-free first
    attempts = [(r, tau) for r in range(restarts) for tau in taus]
    noise = np.array([0.0 if r == 0 else 0.05 for r, _ in attempts])
    k = len(attempts)
    batch = ScoreBundle.from_numpy(start + noise[:, None] * rng.standard_normal((k, n)),
                                   end + noise[:, None] * rng.standard_normal((k, n)),
                                   jump + noise[:, None, None] * rng.standard_normal((k, n, n)),
                                   torch.tensor([tau for _, tau in attempts], dtype=torch.float64))
    with torch.no_grad():
        sp = bregman.solve(batch, SolverConfig(max_sweeps=max_sweeps, tol=1e-6))
    best_score, found = -np.inf, None
    for u in sp.u.numpy():
        order = round_solution(u).perm
        score = eval_objective(order, exact)
        best_score = max(best_score, score)
        if score >= n - 1 - 1e-9 and is_hamiltonian_path(order, edges, n, directed):
            found = order
            break
    bf = brute_force_qap(exact).value >= n - 1 - 1e-9
    return HamiltonianCheck(found, bool(bf), float(best_score))


def random_graph(n, p, rng) -> List[Tuple[int, int]]:
    return [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]


def read_edge_list(path) -> Tuple[List[Tuple[int, int]], int]:
    """Lines ``a b`` (0-based node ids); optional ``n <count>`` line; ``#`` comments."""
    edges, n = [], 0
    for lineno, line in enumerate(open(path), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "n":
                n = max(n, int(parts[1]))
                continue
            a, b = int(parts[0]), int(parts[1])
        except (IndexError, ValueError):
            raise ValueError(f"{path}:{lineno}: expected two node ids") from None
        edges.append((a, b))
        n = max(n, a + 1, b + 1)
    return edges, n


# -- multiset likelihood by enumeration ---------------------------------------


def enumerate_multiset_loglik(logp, m) -> float:
    """log P(sum_i z[i, v] = m[v] for all v) by summing over every z."""
    logp = np.asarray(logp.detach().double() if torch.is_tensor(logp) else logp)
    n, nv, kk = logp.shape
    if kk ** (n * nv) > MAX_ASSIGNMENTS:
        raise ValueError("too many assignments to enumerate")
    m = np.asarray(m)
    cells = [(i, v) for i in range(n) for v in range(nv)]
    total = -np.inf
    for ks in itertools.product(range(kk), repeat=len(cells)):
        z = np.asarray(ks).reshape(n, nv)
        if (z.sum(0) != m).any():
            continue
        lp = sum(logp[i, v, k] for (i, v), k in zip(cells, ks))
        total = np.logaddexp(total, lp)
    return float(total)


def enumerate_best_assignment(logp, m):
    """Constrained argmax of sum log P(z[i, v]) over every z.

    Ties go to the z whose columns, read top to bottom, are lexicographically
    largest. Returns (None, -inf) when no z hits ``m``.
    """
    logp = np.asarray(logp.detach().double() if torch.is_tensor(logp) else logp)
    n, nv, kk = logp.shape
    if kk ** (n * nv) > MAX_ASSIGNMENTS:
        raise ValueError("too many assignments to enumerate")
    m = np.asarray(m)
    best, best_key, best_z = -np.inf, None, None
    for ks in itertools.product(range(kk), repeat=n * nv):
        z = np.asarray(ks).reshape(n, nv)
        if (z.sum(0) != m).any():
            continue
        s = float(logp[np.arange(n)[:, None], np.arange(nv)[None, :], z].sum())
        key = tuple(z.T.ravel())
        if s > best or (s == best and key > best_key):
            best, best_key, best_z = s, key, z
    return best_z, best
