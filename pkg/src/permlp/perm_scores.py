"""Start, end and jump scores for ordering the tagged tokens."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import torch
from torch import nn

from .tensor_engine import SOLVER_DTYPE, ShapeError


@dataclass
class ScoreBundle:
    """Scores of one (or a batch of) permutation problem(s).

    ``start[i]``: input i goes to the first output slot. ``end[i]``: to the
    last slot. ``jump[k, i]``: i directly follows k in the output.
    """
    start: torch.Tensor
    end: torch.Tensor
    jump: torch.Tensor
    tau: Union[float, torch.Tensor] = 1.0

    def __post_init__(self):
        n = self.start.shape[-1]
        if self.end.shape != self.start.shape or self.jump.shape[-2:] != (n, n):
            raise ShapeError("ScoreBundle", self.start.shape, self.end.shape, self.jump.shape)
        if not torch.is_tensor(self.tau):
            if not self.tau > 0:
                raise ValueError("tau must be positive")

    @property
    def n(self) -> int:
        return self.start.shape[-1]

    def score_matrix(self) -> torch.Tensor:
        """s[i, j]: start scores in column 0, end scores in the last column."""
        n = self.n
        first = torch.zeros(n, dtype=self.start.dtype)
        first[0] = 1.0
        last = torch.zeros(n, dtype=self.start.dtype)
        last[-1] = 1.0
        return self.start.unsqueeze(-1) * first + self.end.unsqueeze(-1) * last

    def numpy(self):
        tau = self.tau.item() if torch.is_tensor(self.tau) else float(self.tau)
        return (self.start.detach().numpy(), self.end.detach().numpy(),
                self.jump.detach().numpy(), tau)

    @classmethod
    def from_numpy(cls, start, end, jump, tau=1.0):
        f = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64), dtype=SOLVER_DTYPE)
        return cls(f(start), f(end), f(jump), tau)

    @classmethod
    def random(cls, n, rng: np.random.Generator, tau=1.0, scale=1.0):
        return cls.from_numpy(scale * rng.standard_normal(n), scale * rng.standard_normal(n),
                              scale * rng.standard_normal((n, n)), tau)

    def save(self, path):
        start, end, jump, tau = self.numpy()
        fmt = lambda row: " ".join(repr(float(v)) for v in row)
        lines = [str(self.n), fmt(start), fmt(end)] + [fmt(r) for r in jump] + [repr(tau)]
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        lines = [ln for ln in open(path).read().splitlines() if ln.strip()]
        try:
            n = int(lines[0])
            rows = [[float(v) for v in ln.split()] for ln in lines[1:3 + n]]
            tau = float(lines[3 + n])
        except (IndexError, ValueError) as e:
            raise ValueError(f"{path}: malformed score bundle ({e})") from None
        if len(lines) != 4 + n or any(len(r) != n for r in rows):
            raise ValueError(f"{path}: expected {n}x{n} scores")
        return cls.from_numpy(rows[0], rows[1], rows[2:], tau)


def temperature(n: int) -> float:
    """Length-dependent temperature 1 / log n (n floored at 2)."""
    return 1.0 / math.log(max(n, 2))


class PermScorer(nn.Module):
    """Scores for the ordering stage.

    Hidden state per tagged token: encoder state of its source position,
    embedding of the token, embedding of its occurrence index. Jump scores
    are a scaled bilinear form plus a learned bias on the signed distance
    i - k, clipped to [-radius, radius].
    """

    def __init__(self, n_in, n_out, d_model=64, d_tok=32, d_occ=16, k_max=4, radius=8):
        super().__init__()
        from .multiset_tagger import BiEncoder

        self.encoder = BiEncoder(n_in, d_model)
        self.tok_embed = nn.Embedding(n_out, d_tok)
        self.occ_embed = nn.Embedding(k_max + 1, d_occ)
        self.k_max = k_max
        self.radius = radius
        d = d_model + d_tok + d_occ
        self.d_hidden = d
        self.ff_start = nn.Sequential(nn.Linear(d, d), nn.Tanh())
        self.ff_end = nn.Sequential(nn.Linear(d, d), nn.Tanh())
        self.w_start = nn.Linear(d, 1, bias=False)
        self.w_end = nn.Linear(d, 1, bias=False)
        self.bilinear = nn.Parameter(torch.randn(d, d) / math.sqrt(d))
        self.dist_bias = nn.Parameter(torch.zeros(2 * radius + 1))

    def build_hidden(self, h, z_prime, align, occ):
        """h: (..., n, d); z_prime, align, occ: (..., n') int tensors."""
        n = h.shape[-2]
        if align.numel() and (int(align.min()) < 0 or int(align.max()) >= n):
            raise ValueError("alignment points outside the input")
        if occ.numel() and (int(occ.min()) < 1 or int(occ.max()) > self.k_max):
            raise ValueError(f"occurrence index outside 1..{self.k_max}")
        idx = align.unsqueeze(-1).expand(align.shape + (h.shape[-1],))
        src = torch.gather(h, -2, idx)
        return torch.cat([src, self.tok_embed(z_prime), self.occ_embed(occ)], dim=-1)

    def score(self, hp) -> ScoreBundle:
        n = hp.shape[-2]
        start = self.w_start(self.ff_start(hp)).squeeze(-1)
        end = self.w_end(self.ff_end(hp)).squeeze(-1)
        bil = hp @ self.bilinear @ hp.transpose(-1, -2) / math.sqrt(self.d_hidden)
        pos = torch.arange(n)
        rel = (pos.unsqueeze(0) - pos.unsqueeze(1)).clamp(-self.radius, self.radius)
        jump = bil + self.dist_bias[rel + self.radius]      # [k, i] uses i - k
        tau = torch.full(start.shape[:-1], temperature(n), dtype=SOLVER_DTYPE)
        return ScoreBundle(start.to(SOLVER_DTYPE), end.to(SOLVER_DTYPE),
                           jump.to(SOLVER_DTYPE), tau)

    def forward(self, x, z_prime, align, occ) -> ScoreBundle:
        return self.score(self.build_hidden(self.encoder(x), z_prime, align, occ))
