"""Dense tensors with reverse-mode gradients, backed by torch.

torch supplies the value store and the tape. This module pins down the
conventions the rest of the package relies on (dtypes, the finite stand-in for
minus infinity, masked fills with zero gradient, shape-checked ops) and the
PLPT1 checkpoint container.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Mapping, Sequence

import numpy as np
import torch

SOLVER_DTYPE = torch.float64
PARAM_DTYPE = torch.float32

# log(0) stand-in: finite so that logsumexp and its gradient stay defined
NEG_INF = -1e9

MAGIC = b"PLPT1"


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        super().__init__(f"{op}: incompatible shapes {', '.join(map(str, self.shapes))}")


def tensor(values, dtype=SOLVER_DTYPE, requires_grad: bool = False) -> torch.Tensor:
    return torch.tensor(values, dtype=dtype, requires_grad=requires_grad)


def _check_broadcast(op: str, a: torch.Tensor, b: torch.Tensor):
    # trailing-dimension or scalar broadcast only
    if a.dim() == 0 or b.dim() == 0 or a.shape == b.shape:
        return
    small, big = (a, b) if a.dim() <= b.dim() else (b, a)
    if tuple(big.shape[big.dim() - small.dim():]) != tuple(small.shape):
        raise ShapeError(op, a.shape, b.shape)


def add(a, b):
    _check_broadcast("add", a, b)
    return a + b


def sub(a, b):
    _check_broadcast("sub", a, b)
    return a - b


def mul(a, b):
    _check_broadcast("mul", a, b)
    return a * b


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def logsumexp(x: torch.Tensor, dim: int = -1, keepdim: bool = False) -> torch.Tensor:
    """Max-shifted log-sum-exp along ``dim``."""
    m = x.detach().amax(dim=dim, keepdim=True)
    out = m + torch.log(torch.exp(x - m).sum(dim=dim, keepdim=True))
    return out if keepdim else out.squeeze(dim)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.exp(x - logsumexp(x, dim=dim, keepdim=True))


def log_softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return x - logsumexp(x, dim=dim, keepdim=True)


def masked_fill(x: torch.Tensor, mask: torch.Tensor, value: float) -> torch.Tensor:
    """Replace entries where ``mask`` is true; those entries get zero gradient."""
    if tuple(mask.shape) != tuple(x.shape[x.dim() - mask.dim():]):
        raise ShapeError("masked_fill", x.shape, mask.shape)
    return torch.where(mask, torch.full_like(x, value), x)


def concat(parts: Sequence[torch.Tensor], dim: int = -1) -> torch.Tensor:
    ref = parts[0].shape
    for p in parts[1:]:
        if p.dim() != len(ref) or any(
            p.shape[d] != ref[d] for d in range(len(ref)) if d != dim % len(ref)
        ):
            raise ShapeError("concat", *[q.shape for q in parts])
    return torch.cat(list(parts), dim=dim)


def embedding(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ShapeError("embedding", table.shape, ids.shape)
    return table[ids]


def backward(loss: torch.Tensor, inputs: Sequence[torch.Tensor]) -> list:
    """Gradients of a scalar ``loss`` w.r.t. ``inputs``; unreachable inputs get zeros."""
    if loss.dim() != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    grads = torch.autograd.grad(loss, list(inputs), allow_unused=True)
    return [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]


# -- checkpoint container ----------------------------------------------------
#
# layout: MAGIC, u64 entry count, then per entry:
#   u64 name length, UTF-8 name, u64 ndim, ndim x i64 dims, f32 payload (LE)


def save_tensors(path, tensors: Mapping[str, torch.Tensor]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(tensors)))
        for name, t in tensors.items():
            raw = name.encode("utf-8")
            arr = np.asarray(t.detach().cpu().numpy(), dtype="<f4")
            f.write(struct.pack("<Q", len(raw)))
            f.write(raw)
            f.write(struct.pack("<Q", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.tobytes())


def load_tensors(path) -> Dict[str, torch.Tensor]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a PLPT1 file")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"{path}: truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<Q", take(8))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<Q", take(8))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<Q", take(8))
        dims = struct.unpack(f"<{ndim}q", take(8 * ndim))
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        out[name] = torch.from_numpy(arr.copy())
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return out
