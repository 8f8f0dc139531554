"""Hard permutations: Hungarian rounding, application, and exact scoring."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .perm_scores import ScoreBundle


@dataclass(frozen=True)
class Permutation:
    """``perm[j]`` is the input position placed at output position j."""
    perm: Tuple[int, ...]
    value: float = float("nan")

    def __post_init__(self):
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError(f"not a permutation: {self.perm}")

    def __len__(self):
        return len(self.perm)

    def matrix(self) -> np.ndarray:
        n = len(self.perm)
        v = np.zeros((n, n))
        v[list(self.perm), np.arange(n)] = 1.0
        return v

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.perm)
        for j, i in enumerate(self.perm):
            inv[i] = j
        return Permutation(tuple(inv))


def hungarian(scores) -> Permutation:
    """Maximize sum_j M[perm[j], j] over permutations, O(n^3).

    Shortest augmenting paths with dual potentials, one row at a time; the
    column scan is vectorized.
    """
    m = np.asarray(scores, dtype=np.float64)
    n = m.shape[0]
    if m.shape != (n, n):
        raise ValueError(f"square matrix required, got {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("scores must be finite")
    cost = np.zeros((n + 1, n + 1))
    cost[1:, 1:] = -m
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)      # p[col] = row, 1-based, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = cost[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = tuple(int(p[j]) - 1 for j in range(1, n + 1))
    return Permutation(perm, float(m[list(perm), np.arange(n)].sum()))


def apply_permutation(tokens: Sequence, perm) -> list:
    perm = perm.perm if isinstance(perm, Permutation) else tuple(perm)
    if len(tokens) != len(perm):
        raise ValueError(f"{len(tokens)} tokens but permutation of size {len(perm)}")
    return [tokens[i] for i in perm]


def eval_objective(perm, scores: ScoreBundle) -> float:
    """Exact score of a hard permutation: start/end terms plus its jumps."""
    perm = perm.perm if isinstance(perm, Permutation) else tuple(perm)
    start, end, jump, _ = scores.numpy()
    n = len(perm)
    if n != len(start):
        raise ValueError("permutation and scores differ in size")
    total = start[perm[0]] + end[perm[-1]]
    for j in range(1, n):
        total += jump[perm[j - 1], perm[j]]
    return float(total)


def round_solution(u, scores: ScoreBundle = None) -> Permutation:
    """Hungarian on the soft assignment; value re-scored exactly when scores are given."""
    u = u.detach().numpy() if hasattr(u, "detach") else np.asarray(u)
    p = hungarian(u)
    if scores is not None:
        return Permutation(p.perm, eval_objective(p.perm, scores))
    return p
