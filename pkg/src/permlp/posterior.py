"""E-step: project the model's soft permutation onto gold-consistent ones.

The target is the KL projection of (U*, W*) onto bistochastic matrices that
only map z'_i to output slots holding the same token. It equals a solver
run warm-started at (U*, W*) with forbidden cells pushed to ``NEG_INF``.
The result is a constant; the loss gradient flows through U*, W* only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from . import bregman
from .bregman import SoftPermutation, SolverConfig
from .tensor_engine import NEG_INF

log = logging.getLogger(__name__)


@dataclass
class GoldMask:
    allowed: torch.Tensor      # (..., n, n) bool, [i, j] = z'_i == y_j
    allowed_w: torch.Tensor    # (..., n, n, n) bool, slice j=0 all false

    @classmethod
    def from_tokens(cls, z_prime, y):
        z = torch.as_tensor(np.asarray(z_prime))
        yy = torch.as_tensor(np.asarray(y))
        if z.shape != yy.shape:
            raise ValueError("z' and y differ in length")
        allowed = z.unsqueeze(-1) == yy.unsqueeze(-2)
        prev = allowed[..., :, :-1].transpose(-1, -2)      # [j-1, k]
        rest = allowed[..., :, 1:].unsqueeze(-1) & prev.unsqueeze(-3)
        head = torch.zeros(allowed.shape[:-1] + (1, allowed.shape[-1]), dtype=torch.bool)
        return cls(allowed, torch.cat([head, rest], dim=-2))

    def feasible(self) -> torch.Tensor:
        """Per instance: some bijection uses only allowed cells.

        Token masks are block diagonal up to reordering, so this holds iff
        every row is nonempty and each block has as many rows as columns.
        """
        a = self.allowed.to(torch.float64)
        same_block = (a @ a.transpose(-1, -2)) > 0
        rows_in_block = same_block.sum(-1)
        cols_in_block = self.allowed.sum(-1)
        return ((cols_in_block > 0) & (rows_in_block == cols_in_block)).all(-1)


def project_posterior(sp: SoftPermutation, mask: GoldMask,
                      config: SolverConfig = SolverConfig()) -> SoftPermutation:
    if not bool(mask.feasible().all()):
        raise bregman.InfeasibleError("gold mask admits no permutation")
    with torch.no_grad():
        neg = torch.tensor(NEG_INF, dtype=sp.log_u.dtype)
        log_u = torch.where(mask.allowed, sp.log_u.detach(), neg)
        log_w = torch.where(mask.allowed_w, sp.log_w.detach(), neg)
        return bregman.run(SoftPermutation(log_u, log_w), config)


def generalized_kl(log_p: torch.Tensor, log_q: torch.Tensor, dims: int) -> torch.Tensor:
    """sum p (log p - log q) - p + q over the trailing ``dims`` axes."""
    p, q = torch.exp(log_p), torch.exp(log_q)
    terms = p * (log_p - log_q) - p + q
    return terms.flatten(terms.dim() - dims).sum(-1)


def perm_loss(model: SoftPermutation, target: SoftPermutation) -> torch.Tensor:
    """KL(U_hat || U*) + KL(W_hat || W*); per instance when batched."""
    lu_hat, lw_hat = target.log_u.detach(), target.log_w.detach()
    loss = generalized_kl(lu_hat, model.log_u, 2)
    if model.n > 1:
        loss = loss + generalized_kl(lw_hat[..., :, 1:, :], model.log_w[..., :, 1:, :], 3)
    return loss
