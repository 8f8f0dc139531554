"""Two-stage training and inference: tag, annotate, order, evaluate."""
from __future__ import annotations

import csv
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import bregman
from .bregman import SolverConfig
from .config import PermConfig, TaggerConfig, load_config, save_config
from .data import Example
from .multiset_tagger import (IBM1, MultisetTagger, Vocab, annotate_most_likely,
                              ibm1_bonus, marginal_multiset_loglik, multiset_counts,
                              order_and_align)
from .perm_scores import PermScorer
from .posterior import GoldMask, perm_loss, project_posterior
from .rounding import apply_permutation, hungarian
from .tensor_engine import load_tensors, save_tensors

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


def bucketed_batches(keys: Sequence, batch_size: int, rng: Optional[np.random.Generator]):
    """Index batches whose members share a key (equal lengths -> no padding)."""
    groups = defaultdict(list)
    for idx, key in enumerate(keys):
        groups[key].append(idx)
    batches = []
    for key in sorted(groups):
        idx = np.array(groups[key])
        if rng is not None:
            idx = rng.permutation(idx)
        batches += [idx[s:s + batch_size].tolist() for s in range(0, len(idx), batch_size)]
    if rng is not None:
        batches = [batches[k] for k in rng.permutation(len(batches))]
    return batches


def epoch_rng(seed: int, epoch: int):
    return np.random.default_rng([seed, epoch])


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model, optimizer=None, meta: Optional[Dict[str, float]] = None):
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        for idx, p in enumerate(optimizer.param_groups[0]["params"]):
            st = optimizer.state.get(p)
            if st:
                tensors[f"opt.{idx}.step"] = torch.as_tensor(float(st["step"])).reshape(1)
                tensors[f"opt.{idx}.exp_avg"] = st["exp_avg"]
                tensors[f"opt.{idx}.exp_avg_sq"] = st["exp_avg_sq"]
    for k, v in (meta or {}).items():
        tensors[f"meta.{k}"] = torch.tensor([float(v)])
    save_tensors(path, tensors)


def load_checkpoint(path, model, optimizer=None) -> Dict[str, float]:
    tensors = load_tensors(path)
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
    if optimizer is not None:
        for idx, p in enumerate(optimizer.param_groups[0]["params"]):
            if f"opt.{idx}.step" in tensors:
                optimizer.state[p] = {
                    "step": torch.tensor(tensors[f"opt.{idx}.step"].item()),
                    "exp_avg": tensors[f"opt.{idx}.exp_avg"].clone(),
                    "exp_avg_sq": tensors[f"opt.{idx}.exp_avg_sq"].clone(),
                }
    return {k[5:]: v.item() for k, v in tensors.items() if k.startswith("meta.")}


def _check_finite(loss, what):
    if not math.isfinite(float(loss.detach())):
        raise DivergenceError(f"{what}: loss became {float(loss.detach())}; lower the learning rate")


# -- stage 1 -------------------------------------------------------------------


def build_tagger(cfg: TaggerConfig, vocab_in: Vocab, vocab_out: Vocab) -> MultisetTagger:
    torch.manual_seed(cfg.seed)
    return MultisetTagger(len(vocab_in), len(vocab_out), cfg.d_model, cfg.d_ff, cfg.k_max)


def load_tagger(run_dir, vocab_in, vocab_out) -> MultisetTagger:
    cfg = load_config(TaggerConfig, Path(run_dir) / "config.txt")
    model = build_tagger(cfg, vocab_in, vocab_out)
    load_checkpoint(Path(run_dir) / "model.plpt", model)
    return model.eval()


@torch.no_grad()
def predict_multisets(model: MultisetTagger, xs: List[List[int]]) -> List[np.ndarray]:
    """Per-cell most likely multiplicities, z[i, v]."""
    out: List[Optional[np.ndarray]] = [None] * len(xs)
    for batch in bucketed_batches([len(x) for x in xs], 256, None):
        logp = model(torch.tensor([xs[b] for b in batch]))
        z = logp.argmax(-1).numpy()
        for b, zz in zip(batch, z):
            out[b] = zz
    return out


def multiset_accuracy(model, examples: List[Example]) -> float:
    zs = predict_multisets(model, [ex.x for ex in examples])
    hits = [np.array_equal(z.sum(0), multiset_counts(ex.y, z.shape[1]))
            for z, ex in zip(zs, examples)]
    return float(np.mean(hits)) if hits else float("nan")


def train_multiset(train: List[Example], dev: List[Example], vocab_in: Vocab, vocab_out: Vocab,
                   cfg: TaggerConfig, out_dir, resume: bool = False) -> MultisetTagger:
    """Maximize the marginal log-likelihood of the gold multisets."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.txt")
    model = build_tagger(cfg, vocab_in, vocab_out)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    start_epoch = 0
    if resume and (out / "last.plpt").exists():
        start_epoch = int(load_checkpoint(out / "last.plpt", model, opt)["epoch"]) + 1
    n_out = len(vocab_out)
    counts = [multiset_counts(ex.y, n_out) for ex in train]
    confident = None
    if cfg.ibm1:
        ibm = IBM1().fit([(ex.x, ex.y) for ex in train])
        confident = [ibm.confident_counts(ex.x, ex.y, n_out, cfg.ibm1_chi) for ex in train]
    metrics = open(out / "metrics.csv", "a" if start_epoch else "w", newline="")
    writer = csv.writer(metrics)
    if not start_epoch:
        writer.writerow(["epoch", "train_loglik", "dev_multiset_acc"])
    for epoch in range(start_epoch, cfg.epochs):
        model.train()
        total = 0.0
        for batch in bucketed_batches([len(ex.x) for ex in train], cfg.batch_size,
                                      epoch_rng(cfg.seed, epoch)):
            logp = model(torch.tensor([train[b].x for b in batch]))
            ll = marginal_multiset_loglik(logp, np.stack([counts[b] for b in batch]))
            # unreachable gold multisets (-inf) are skipped; NaN still propagates
            obj = torch.where(torch.isneginf(ll), torch.zeros_like(ll), ll).sum()
            if confident is not None:
                for row, b in enumerate(batch):
                    obj = obj + ibm1_bonus(logp[row], confident[b], cfg.ibm1_lambda,
                                           epoch, cfg.ibm1_epochs)
            loss = -obj / len(batch)
            _check_finite(loss, f"multiset epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(obj.detach())
        model.eval()
        acc = multiset_accuracy(model, dev)
        writer.writerow([epoch, f"{total / len(train):.6f}", f"{acc:.6f}"])
        metrics.flush()
        log.info("multiset epoch %d loglik %.4f dev acc %.4f", epoch, total / len(train), acc)
        save_checkpoint(out / "last.plpt", model, opt, {"epoch": epoch})
    metrics.close()
    save_checkpoint(out / "model.plpt", model)
    return model.eval()


@dataclass
class AnnotationReport:
    kept: int
    dropped: int

    @property
    def drop_rate(self) -> float:
        total = self.kept + self.dropped
        return self.dropped / total if total else 0.0


@torch.no_grad()
def annotate(examples: List[Example], model: MultisetTagger) -> Tuple[List[Example], AnnotationReport]:
    """Attach the most likely gold-consistent z, z', a and occurrence ids."""
    n_out = model.n_out
    kept, dropped = [], 0
    logps: List[Optional[torch.Tensor]] = [None] * len(examples)
    for batch in bucketed_batches([len(ex.x) for ex in examples], 256, None):
        lp = model(torch.tensor([examples[b].x for b in batch]))
        for b, row in zip(batch, lp):
            logps[b] = row
    for ex, lp in zip(examples, logps):
        m = multiset_counts(ex.y, n_out)
        try:
            z = annotate_most_likely(lp, m)
        except ValueError:
            dropped += 1
            continue
        ordered = order_and_align(z)
        if sorted(ordered.z_prime) != sorted(ex.y):
            dropped += 1
            continue
        triples = [(int(i), int(v), int(z[i, v])) for i, v in zip(*np.nonzero(z))]
        kept.append(Example(ex.x, ex.y, triples, ordered.z_prime, ordered.align, ordered.occ))
    return kept, AnnotationReport(len(kept), dropped)


# -- stage 2 -------------------------------------------------------------------


def build_perm_model(cfg: PermConfig, vocab_in: Vocab, vocab_out: Vocab) -> PermScorer:
    torch.manual_seed(cfg.seed)
    return PermScorer(len(vocab_in), len(vocab_out), cfg.d_model, cfg.d_tok, cfg.d_occ,
                      cfg.k_max, cfg.radius)


def load_perm_model(run_dir, vocab_in, vocab_out) -> Tuple[PermScorer, PermConfig]:
    cfg = load_config(PermConfig, Path(run_dir) / "config.txt")
    model = build_perm_model(cfg, vocab_in, vocab_out)
    load_checkpoint(Path(run_dir) / "model.plpt", model)
    return model.eval(), cfg


def _stack(examples, batch, name):
    return torch.tensor([getattr(examples[b], name) for b in batch])


def perm_step(model: PermScorer, examples: List[Example], batch, cfg: PermConfig):
    """Solve, project onto gold-consistent permutations, return the mean KL loss."""
    x = _stack(examples, batch, "x")
    zp = _stack(examples, batch, "z_prime")
    scores = model(x, zp, _stack(examples, batch, "align"), _stack(examples, batch, "occ"))
    sp = bregman.solve(scores, SolverConfig(max_sweeps=cfg.train_sweeps, tol=cfg.tol))
    mask = GoldMask.from_tokens(zp, _stack(examples, batch, "y"))
    target = project_posterior(sp, mask, SolverConfig(max_sweeps=cfg.estep_sweeps, tol=cfg.tol))
    return perm_loss(sp, target).mean()


@torch.no_grad()
def predict(tagger: MultisetTagger, perm_model: PermScorer, xs: List[List[int]],
            sweeps: int = 100, tol: float = 1e-4):
    """Full pipeline; returns (predicted output ids, predicted multiset counts)."""
    zs = predict_multisets(tagger, xs)
    ordered = [order_and_align(z) for z in zs]
    outs: List[List[int]] = [[] for _ in xs]
    keys = [(len(x), len(o.z_prime)) for x, o in zip(xs, ordered)]
    for batch in bucketed_batches(keys, 64, None):
        if keys[batch[0]][1] == 0:
            continue
        scores = perm_model(torch.tensor([xs[b] for b in batch]),
                            torch.tensor([ordered[b].z_prime for b in batch]),
                            torch.tensor([ordered[b].align for b in batch]),
                            torch.tensor([ordered[b].occ for b in batch]))
        sp = bregman.solve(scores, SolverConfig(max_sweeps=sweeps, tol=tol))
        u = sp.u.numpy()
        for row, b in enumerate(batch):
            outs[b] = apply_permutation(ordered[b].z_prime, hungarian(u[row]))
    return outs, [z.sum(0) for z in zs]


def exact_match(tagger, perm_model, examples: List[Example], sweeps=100) -> float:
    preds, _ = predict(tagger, perm_model, [ex.x for ex in examples], sweeps)
    return float(np.mean([p == ex.y for p, ex in zip(preds, examples)]))


def train_perm(train: List[Example], dev: List[Example], tagger: MultisetTagger,
               vocab_in: Vocab, vocab_out: Vocab, cfg: PermConfig, out_dir,
               resume: bool = False) -> PermScorer:
    """Train the ordering model on annotated examples; keeps the best dev epoch."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.txt")
    train = [ex for ex in train if ex.annotated]
    if cfg.max_train is not None:
        train = train[: cfg.max_train]
    if cfg.max_dev is not None:
        dev = dev[: cfg.max_dev]
    model = build_perm_model(cfg, vocab_in, vocab_out)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    start_epoch, best = 0, -1.0
    if resume and (out / "last.plpt").exists():
        meta = load_checkpoint(out / "last.plpt", model, opt)
        start_epoch, best = int(meta["epoch"]) + 1, meta["best"]
    metrics = open(out / "metrics.csv", "a" if start_epoch else "w", newline="")
    writer = csv.writer(metrics)
    if not start_epoch:
        writer.writerow(["epoch", "train_loss", "dev_exact_match"])
    keys = [(len(ex.x), len(ex.z_prime)) for ex in train]
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.process_time()
        model.train()
        total = 0.0
        for batch in bucketed_batches(keys, cfg.batch_size, epoch_rng(cfg.seed, epoch)):
            loss = perm_step(model, train, batch, cfg)
            _check_finite(loss, f"permutation epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        model.eval()
        acc = exact_match(tagger, model, dev, cfg.eval_sweeps) if dev else float("nan")
        secs = time.process_time() - t0
        # timings go to the log only, so same-seed runs give identical CSVs
        writer.writerow([epoch, f"{total / len(train):.6f}", f"{acc:.6f}"])
        metrics.flush()
        log.info("perm epoch %d loss %.4f dev exact %.4f (%.0fs)", epoch, total / len(train), acc, secs)
        if acc > best or not dev:
            best = acc
            save_checkpoint(out / "model.plpt", model)
        save_checkpoint(out / "last.plpt", model, opt, {"epoch": epoch, "best": best})
    metrics.close()
    if not (out / "model.plpt").exists():
        save_checkpoint(out / "model.plpt", model)
    load_checkpoint(out / "model.plpt", model)
    return model.eval()


# -- evaluation ----------------------------------------------------------------


@dataclass
class EvalRow:
    length: int
    n_examples: int
    exact_match: float


def evaluate(test: List[Example], tagger, perm_model, sweeps: int = 100):
    """Exact match by input length, plus per-example (multiset ok, sequence ok) flags."""
    preds, counts = predict(tagger, perm_model, [ex.x for ex in test], sweeps)
    n_out = tagger.n_out
    seq_ok = [p == ex.y for p, ex in zip(preds, test)]
    freq_ok = [np.array_equal(c, multiset_counts(ex.y, n_out)) for c, ex in zip(counts, test)]
    by_len = defaultdict(list)
    for ex, ok in zip(test, seq_ok):
        by_len[len(ex.x)].append(ok)
    rows = [EvalRow(n, len(v), float(np.mean(v))) for n, v in sorted(by_len.items())]
    return rows, freq_ok, seq_ok


def write_eval_csv(rows: List[EvalRow], path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["length", "n_examples", "exact_match"])
        for r in rows:
            w.writerow([r.length, r.n_examples, f"{r.exact_match:.6f}"])


def aggregate(rows: List[EvalRow]) -> float:
    total = sum(r.n_examples for r in rows)
    return sum(r.exact_match * r.n_examples for r in rows) / total if total else float("nan")
