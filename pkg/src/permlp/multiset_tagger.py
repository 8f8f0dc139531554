"""Multiset tagging: one multiset of output tokens per input token.

Every (position, vocab item) pair gets its own softmax over multiplicities
0..k_max. The gold multiset marginalizes over which position produced which
token; the per-item count distributions are convolved position by position.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence

import numpy as np
import torch
from torch import nn

from .tensor_engine import NEG_INF, SOLVER_DTYPE, log_softmax, logsumexp

PAD = "<pad>"


class Vocab:
    """Dense token <-> id map. Id 0 is reserved for padding."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = [PAD]
        self.stoi: Dict[str, int] = {PAD: 0}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Sequence[str]) -> List[int]:
        try:
            return [self.stoi[t] for t in tokens]
        except KeyError as e:
            raise KeyError(f"unknown token {e.args[0]!r}") from None

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.itos[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("".join(t + "\n" for t in self.itos))

    @classmethod
    def load(cls, path):
        v = cls()
        lines = open(path, encoding="utf-8").read().split("\n")
        if lines[-1] == "":
            lines.pop()
        if not lines or lines[0] != PAD:
            raise ValueError(f"{path}: first vocab entry must be {PAD}")
        for t in lines[1:]:
            v.add(t)
        return v


class BiEncoder(nn.Module):
    """Bidirectional LSTM states plus the static token embedding."""

    def __init__(self, vocab_size: int, d_model: int = 64):
        super().__init__()
        if d_model % 2:
            raise ValueError("d_model must be even")
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, d_model)
        self.lstm = nn.LSTM(d_model, d_model // 2, batch_first=True, bidirectional=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (batch, n) or (n,) token ids of equal length -> (..., n, d_model)."""
        if x.numel() and (int(x.min()) < 0 or int(x.max()) >= self.vocab_size):
            raise ValueError(f"token id outside vocabulary of size {self.vocab_size}")
        single = x.dim() == 1
        if single:
            x = x.unsqueeze(0)
        e = self.embed(x)
        h, _ = self.lstm(e)
        h = h + e
        return h[0] if single else h


class MultisetTagger(nn.Module):
    def __init__(self, n_in: int, n_out: int, d_model: int = 64, d_ff: int = 64, k_max: int = 4):
        super().__init__()
        self.n_out = n_out
        self.k_max = k_max
        self.encoder = BiEncoder(n_in, d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.Tanh())
        self.out = nn.Linear(d_ff, n_out * (k_max + 1))

    def multiplicity_logits(self, h: torch.Tensor) -> torch.Tensor:
        """Log P(z[i, v] = k), shape (..., n, V, k_max + 1)."""
        logits = self.out(self.ff(h))
        logits = logits.reshape(h.shape[:-1] + (self.n_out, self.k_max + 1))
        return log_softmax(logits, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.multiplicity_logits(self.encoder(x))


def multiset_counts(y_ids: Sequence[int], n_vocab: int) -> np.ndarray:
    return np.bincount(np.asarray(y_ids, dtype=np.int64), minlength=n_vocab)


def count_logprobs(logp: torch.Tensor, max_count: int) -> torch.Tensor:
    """Log P(sum_i z[i, v] = c) for c in 0..max_count, shape (..., V, max_count + 1)."""
    logp = logp.to(SOLVER_DTYPE)
    n, kk = logp.shape[-3], logp.shape[-1]
    batch_v = logp.shape[:-3] + logp.shape[-2:-1]
    c = max_count + 1
    alpha = torch.full(batch_v + (c,), NEG_INF, dtype=SOLVER_DTYPE)
    alpha = torch.cat([torch.zeros(batch_v + (1,), dtype=SOLVER_DTYPE), alpha[..., 1:]], -1)
    pad = torch.full(batch_v + (kk,), NEG_INF, dtype=SOLVER_DTYPE)
    for i in range(n):
        padded = torch.cat([pad, alpha], -1)
        # shifted[..., c, k] = alpha[..., c - k]
        shifted = torch.stack([padded[..., kk - k: kk - k + c] for k in range(kk)], -1)
        alpha = logsumexp(shifted + logp[..., i, :, :].unsqueeze(-2), dim=-1)
    return alpha


def marginal_multiset_loglik(logp: torch.Tensor, m, per_item: bool = False):
    """Log-probability that the tagged multisets add up to ``m``.

    logp: (..., n, V, K+1) from ``multiplicity_logits``; m: (..., V) counts.
    Infeasible targets give -inf.
    """
    m = torch.as_tensor(np.asarray(m), dtype=torch.long)
    n, k_max = logp.shape[-3], logp.shape[-1] - 1
    alpha = count_logprobs(logp, int(m.max()) if m.numel() else 0)
    terms = torch.gather(alpha, -1, m.unsqueeze(-1)).squeeze(-1)
    infeasible = (m > n * k_max) | (terms <= NEG_INF / 2)
    terms = torch.where(infeasible, torch.full_like(terms, -float("inf")), terms)
    return terms if per_item else terms.sum(-1)


def annotate_most_likely(logp, m) -> np.ndarray:
    """Most likely z subject to sum_i z[i, v] = m[v], by a max-sum DP per item.

    Among equally likely assignments the earlier position takes the larger
    multiplicity.
    """
    logp = np.asarray(logp.detach().cpu().double() if torch.is_tensor(logp) else logp,
                      dtype=np.float64)
    m = np.asarray(m, dtype=np.int64)
    n, nv, kk = logp.shape
    c = int(m.max()) + 1 if m.size else 1
    # best[i, v, c]: best score of positions i.. summing to c
    best = np.full((n + 1, nv, c), -np.inf)
    best[n, :, 0] = 0.0
    for i in range(n - 1, -1, -1):
        for k in range(min(kk, c)):
            cand = logp[i, :, k, None] + best[i + 1, :, : c - k]
            best[i, :, k:] = np.maximum(best[i, :, k:], cand)
    z = np.zeros((n, nv), dtype=np.int64)
    for v in range(nv):
        rem = int(m[v])
        if not np.isfinite(best[0, v, rem]):
            raise ValueError(f"count {rem} of item {v} is not attainable")
        for i in range(n):
            ks = np.arange(min(kk - 1, rem) + 1)
            cand = logp[i, v, ks] + best[i + 1, v, rem - ks]
            k = int(ks[cand == cand.max()].max())
            z[i, v] = k
            rem -= k
    return z


@dataclass
class OrderedTokens:
    z_prime: List[int]
    align: List[int]
    occ: List[int]


def order_and_align(z) -> OrderedTokens:
    """Concatenate the per-position multisets, each sorted by vocab id.

    ``occ`` is 1-based: the k-th copy of a type within its own multiset.
    """
    z = np.asarray(z)
    out = OrderedTokens([], [], [])
    for i in range(z.shape[0]):
        for v in np.nonzero(z[i])[0]:
            for k in range(1, int(z[i, v]) + 1):
                out.z_prime.append(int(v))
                out.align.append(i)
                out.occ.append(k)
    return out


# -- IBM model 1 initialization ----------------------------------------------


class IBM1:
    """Lexical translation table t(target | source) fitted by EM."""

    def __init__(self):
        self.t: Dict[int, Dict[int, float]] = {}

    def fit(self, pairs: Sequence, iterations: int = 10):
        tgt_types = {v for _, y in pairs for v in y}
        uniform = 1.0 / max(len(tgt_types), 1)
        t = defaultdict(lambda: defaultdict(lambda: uniform))
        for _ in range(iterations):
            counts = defaultdict(lambda: defaultdict(float))
            totals = defaultdict(float)
            for x, y in pairs:
                for v in y:
                    z = sum(t[u][v] for u in x)
                    for u in x:
                        p = t[u][v] / z
                        counts[u][v] += p
                        totals[u] += p
            t = defaultdict(lambda: defaultdict(float))
            for u, row in counts.items():
                for v, c in row.items():
                    t[u][v] = c / totals[u]
        self.t = {u: dict(row) for u, row in t.items()}
        return self

    def posterior(self, x, y) -> np.ndarray:
        """P(y[j] aligned to x[i]), shape (len(y), len(x))."""
        p = np.array([[self.t.get(u, {}).get(v, 0.0) for u in x] for v in y], dtype=np.float64)
        z = p.sum(1, keepdims=True)
        return np.divide(p, z, out=np.zeros_like(p), where=z > 0)

    def confident_counts(self, x, y, n_vocab: int, chi: float = 0.9) -> np.ndarray:
        """l[i, v]: number of y-tokens of type v aligned to x[i] with posterior >= chi."""
        post = self.posterior(x, y)
        out = np.zeros((len(x), n_vocab), dtype=np.int64)
        for j, v in enumerate(y):
            for i in np.nonzero(post[j] >= chi)[0]:
                out[i, v] += 1
        return out


def ibm1_bonus(logp: torch.Tensor, counts, lam: float, epoch: int, g: int) -> torch.Tensor:
    """lam * sum log P(z[i, v] >= l[i, v]) over confident pairs, during epochs < g."""
    if lam == 0 or epoch >= g:
        return torch.zeros((), dtype=SOLVER_DTYPE)
    counts = torch.as_tensor(np.asarray(counts), dtype=torch.long)
    kk = logp.shape[-1]
    ks = torch.arange(kk)
    at_least = torch.where(ks >= counts.unsqueeze(-1), logp.to(SOLVER_DTYPE),
                           torch.full((), NEG_INF, dtype=SOLVER_DTYPE))
    terms = logsumexp(at_least, dim=-1)
    active = (counts > 0) & (counts < kk)
    return lam * torch.where(active, terms, torch.zeros_like(terms)).sum()
