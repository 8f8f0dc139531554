"""Doubling data and the line-oriented dataset format.

A dataset file starts with ``#permlp-data count=N`` followed by N records,
one per line, fields separated by tabs, each field ``name=value``. Token ids
are space separated. Required fields are ``x`` and ``y``; annotated records
add ``z`` (``i,v,count`` triples), ``z_prime``, ``align`` and ``occ``.
"""
from __future__ import annotations

import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .config import DoublingConfig
from .multiset_tagger import Vocab

log = logging.getLogger(__name__)

HEADER = "#permlp-data"
LIST_FIELDS = ("x", "y", "z_prime", "align", "occ")


@dataclass
class Example:
    x: List[int]
    y: List[int]
    z: Optional[List[Tuple[int, int, int]]] = None
    z_prime: Optional[List[int]] = None
    align: Optional[List[int]] = None
    occ: Optional[List[int]] = None

    @property
    def annotated(self) -> bool:
        return self.z_prime is not None


@dataclass
class DoublingData:
    train: List[Example]
    dev: List[Example]
    test: List[Example]
    vocab_in: Vocab
    vocab_out: Vocab
    config: DoublingConfig = field(default_factory=DoublingConfig)


def doubling_alphabet(size: int) -> List[str]:
    return list(string.ascii_lowercase[:size])


def _split(rng, n, lo, hi, size):
    out = []
    for _ in range(n):
        length = int(rng.integers(lo, hi + 1))
        w = [int(s) + 1 for s in rng.integers(0, size, length)]
        out.append(Example(w, w + w))
    return out


def gen_doubling(cfg: DoublingConfig = DoublingConfig()) -> DoublingData:
    """x is a uniform random word, y = x x. Lengths uniform per split."""
    rng = np.random.default_rng(cfg.seed)
    alphabet = doubling_alphabet(cfg.alphabet_size)
    train = _split(rng, cfg.n_train, cfg.train_min, cfg.train_max, cfg.alphabet_size)
    dev = _split(rng, cfg.n_dev, cfg.dev_min, cfg.dev_max, cfg.alphabet_size)
    test = _split(rng, cfg.n_test, cfg.test_min, cfg.test_max, cfg.alphabet_size)
    return DoublingData(train, dev, test, Vocab(alphabet), Vocab(alphabet), cfg)


def _ids(text):
    return [int(t) for t in text.split()]


def format_record(ex: Example) -> str:
    parts = []
    for name in LIST_FIELDS:
        val = getattr(ex, name)
        if val is not None:
            parts.append(f"{name}=" + " ".join(map(str, val)))
        if name == "y" and ex.z is not None:
            parts.append("z=" + " ".join(f"{i},{v},{c}" for i, v, c in ex.z))
    return "\t".join(parts)


def parse_record(line: str, where: str = "") -> Example:
    fields_ = {}
    for part in line.split("\t"):
        if "=" not in part:
            raise ValueError(f"{where}: field without name: {part[:30]!r}")
        name, val = part.split("=", 1)
        fields_[name] = val
    missing = {"x", "y"} - fields_.keys()
    if missing:
        raise ValueError(f"{where}: missing field(s) {sorted(missing)}")
    kw = {}
    try:
        for name, val in fields_.items():
            if name in LIST_FIELDS:
                kw[name] = _ids(val)
            elif name == "z":
                kw["z"] = [tuple(int(a) for a in t.split(",")) for t in val.split()]
                if any(len(t) != 3 for t in kw["z"]):
                    raise ValueError("z triples need three entries")
            else:
                log.warning("%s: ignoring unknown field %r", where, name)
    except ValueError as e:
        raise ValueError(f"{where}: {e}") from None
    ann = [n for n in ("z_prime", "align", "occ") if n in kw]
    if ann and (len(ann) != 3 or len({len(kw[n]) for n in ann}) != 1):
        raise ValueError(f"{where}: inconsistent annotation fields")
    return Example(**kw)


def save_dataset(examples: List[Example], path):
    with open(path, "w") as f:
        f.write(f"{HEADER} count={len(examples)}\n")
        for ex in examples:
            f.write(format_record(ex) + "\n")


def load_dataset(path) -> List[Example]:
    text = Path(path).read_text()
    lines = text.split("\n")
    if not lines or not lines[0].startswith(HEADER):
        raise ValueError(f"{path}:1: missing {HEADER} header")
    try:
        count = int(lines[0].split("count=", 1)[1])
    except (IndexError, ValueError):
        raise ValueError(f"{path}:1: header has no record count") from None
    if not text.endswith("\n"):
        raise ValueError(f"{path}:{len(lines)}: truncated record (no final newline)")
    body = lines[1:-1]
    out = [parse_record(line, f"{path}:{k}") for k, line in enumerate(body, 2)]
    if len(out) != count:
        raise ValueError(f"{path}:{len(lines)}: expected {count} records, found {len(out)}")
    return out


def save_doubling(data: DoublingData, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "dev", "test"):
        save_dataset(getattr(data, split), out / f"{split}.tsv")
    data.vocab_in.save(out / "vocab_in.txt")
    data.vocab_out.save(out / "vocab_out.txt")


def load_vocabs(data_dir) -> Tuple[Vocab, Vocab]:
    d = Path(data_dir)
    return Vocab.load(d / "vocab_in.txt"), Vocab.load(d / "vocab_out.txt")
