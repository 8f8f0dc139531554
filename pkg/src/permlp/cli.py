"""Command line: ``permlp <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import bregman, pipeline, reporting
from .bregman import SolverConfig
from .config import (DoublingConfig, PermConfig, TaggerConfig, load_config, replace,
                     save_config)
from .data import gen_doubling, load_dataset, load_vocabs, save_dataset, save_doubling
from .oracle import check_hamiltonian, read_edge_list
from .perm_scores import ScoreBundle
from .rounding import round_solution

log = logging.getLogger("permlp")


def _cfg(cls, args, **overrides):
    cfg = load_config(cls, args.config) if args.config else cls()
    return replace(cfg, **overrides)


def cmd_gen_doubling(args):
    cfg = _cfg(DoublingConfig, args, seed=args.seed)
    data = gen_doubling(cfg)
    save_doubling(data, args.out_dir)
    save_config(cfg, Path(args.out_dir) / "config.txt")
    print(f"wrote {len(data.train)}/{len(data.dev)}/{len(data.test)} examples to {args.out_dir}")


def cmd_train_multiset(args):
    cfg = _cfg(TaggerConfig, args, seed=args.seed, epochs=args.epochs, lr=args.lr)
    vin, vout = load_vocabs(args.data)
    train = load_dataset(Path(args.data) / "train.tsv")
    dev = load_dataset(Path(args.data) / "dev.tsv")
    model = pipeline.train_multiset(train, dev, vin, vout, cfg, args.out_dir, resume=args.resume)
    print(f"dev multiset accuracy {pipeline.multiset_accuracy(model, dev):.4f}")


def cmd_annotate(args):
    vin, vout = load_vocabs(args.data)
    tagger = pipeline.load_tagger(args.tagger, vin, vout)
    examples = load_dataset(Path(args.data) / f"{args.split}.tsv")
    kept, report = pipeline.annotate(examples, tagger)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(kept, out / f"{args.split}_annotated.tsv")
    (out / "annotate_report.txt").write_text(
        f"kept = {report.kept}\ndropped = {report.dropped}\ndrop_rate = {report.drop_rate:.6f}\n")
    print(f"kept {report.kept}, dropped {report.dropped} ({100 * report.drop_rate:.2f}%)")


def cmd_train_perm(args):
    cfg = _cfg(PermConfig, args, seed=args.seed, epochs=args.epochs, lr=args.lr,
               train_sweeps=args.sweeps)
    vin, vout = load_vocabs(args.data)
    tagger = pipeline.load_tagger(args.tagger, vin, vout)
    train = load_dataset(args.annotated)
    dev = load_dataset(Path(args.data) / "dev.tsv")
    model = pipeline.train_perm(train, dev, tagger, vin, vout, cfg, args.out_dir, resume=args.resume)
    print(f"dev exact match {pipeline.exact_match(tagger, model, dev, cfg.eval_sweeps):.4f}")


def cmd_eval(args):
    vin, vout = load_vocabs(args.data)
    tagger = pipeline.load_tagger(args.tagger, vin, vout)
    perm_model, cfg = pipeline.load_perm_model(args.perm, vin, vout)
    sweeps = args.sweeps or cfg.eval_sweeps
    test = load_dataset(Path(args.data) / f"{args.split}.tsv")
    rows, freq_ok, seq_ok = pipeline.evaluate(test, tagger, perm_model, sweeps)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_eval_csv(rows, out / "metrics.csv")
    reporting.length_curve(out / "metrics.csv", out / "length_curve.txt")
    table = reporting.breakdown(freq_ok, seq_ok).format()
    (out / "breakdown.txt").write_text(table)
    (out / "config.txt").write_text(f"sweeps = {sweeps}\nsplit = {args.split}\n")
    for r in rows:
        print(f"length {r.length:3d}  n={r.n_examples:4d}  exact match {r.exact_match:.4f}")
    print(f"all          exact match {pipeline.aggregate(rows):.4f}")
    print(table, end="")


def cmd_solve(args):
    scores = ScoreBundle.load(args.scores)
    cfg = SolverConfig(max_sweeps=args.sweeps or 100, tol=args.tol, tau=args.tau)
    with torch.no_grad():
        sp = bregman.solve(scores, cfg)
    perm = round_solution(sp.u, scores)
    lines = ["U"] + [" ".join(f"{v:.6g}" for v in row) for row in sp.u.numpy()]
    lines += [f"permutation {' '.join(map(str, perm.perm))}", f"objective {perm.value:.6g}",
              f"sweeps {sp.sweeps}", f"violation {sp.violation:.3g}",
              f"converged {sp.converged}"]
    text = "\n".join(lines) + "\n"
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "solution.txt").write_text(text)
    print(text, end="")


def cmd_hamiltonian(args):
    edges, n = read_edge_list(args.edges)
    res = check_hamiltonian(edges, n, directed=args.directed, seed=args.seed or 0)
    print(f"nodes {n}, edges {len(edges)}")
    print(f"solver certificate: {' '.join(map(str, res.solver_path)) if res.solver_path else 'none'}"
          f" (best rounded score {res.solver_score:g} of {n - 1})")
    print(f"brute force: {'Hamiltonian path exists' if res.brute_force else 'no Hamiltonian path'}")


def build_parser():
    p = argparse.ArgumentParser(prog="permlp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--config")
        if out:
            sp.add_argument("--out-dir", required=True)
        return sp

    common(sub.add_parser("gen-doubling")).set_defaults(func=cmd_gen_doubling)

    sp = common(sub.add_parser("train-multiset"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_train_multiset)

    sp = common(sub.add_parser("annotate"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--tagger", required=True)
    sp.add_argument("--split", default="train")
    sp.set_defaults(func=cmd_annotate)

    sp = common(sub.add_parser("train-perm"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--tagger", required=True)
    sp.add_argument("--annotated", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--sweeps", type=int, help="solver sweeps per training step")
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_train_perm)

    sp = common(sub.add_parser("eval"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--tagger", required=True)
    sp.add_argument("--perm", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--sweeps", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("solve")
    sp.add_argument("scores")
    sp.add_argument("--out-dir")
    sp.add_argument("--sweeps", type=int)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("hamiltonian-demo")
    sp.add_argument("edges")
    sp.add_argument("--directed", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_hamiltonian)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (ValueError, pipeline.DivergenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
