"""Run configurations and their flat ``key = value`` file form."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, fields
from typing import Optional, get_type_hints

log = logging.getLogger(__name__)


@dataclass
class DoublingConfig:
    alphabet_size: int = 11
    train_min: int = 5
    train_max: int = 10
    dev_min: int = 11
    dev_max: int = 11
    test_min: int = 11
    test_max: int = 20
    n_train: int = 4000
    n_dev: int = 500
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_dev, self.n_test) <= 0:
            raise ValueError("split sizes must be positive")
        for lo, hi in [(self.train_min, self.train_max), (self.dev_min, self.dev_max),
                       (self.test_min, self.test_max)]:
            if not 1 <= lo <= hi:
                raise ValueError(f"empty length range [{lo}, {hi}]")
        if not 1 <= self.alphabet_size <= 26:
            raise ValueError("alphabet_size must be in 1..26")


@dataclass
class TaggerConfig:
    d_model: int = 64
    d_ff: int = 64
    k_max: int = 4
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    ibm1: bool = False
    ibm1_chi: float = 0.9
    ibm1_lambda: float = 0.5
    ibm1_epochs: int = 5


@dataclass
class PermConfig:
    d_model: int = 64
    d_tok: int = 32
    d_occ: int = 16
    k_max: int = 4
    radius: int = 8
    epochs: int = 12
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    train_sweeps: int = 25
    estep_sweeps: int = 25
    eval_sweeps: int = 100
    tol: float = 1e-4
    max_train: Optional[int] = None
    max_dev: Optional[int] = 200  # dev examples scored per epoch for model selection


def _coerce(kind, text: str):
    if text == "None":
        return None
    if kind in (bool, "bool"):
        if text not in ("True", "False", "true", "false", "1", "0"):
            raise ValueError(f"not a boolean: {text!r}")
        return text in ("True", "true", "1")
    for t in (int, float, str):
        if kind is t or kind == Optional[t]:
            return t(text)
    return text


def save_config(cfg, path):
    with open(path, "w") as f:
        for fld in fields(cfg):
            f.write(f"{fld.name} = {getattr(cfg, fld.name)}\n")


def parse_overrides(cls, pairs):
    hints = get_type_hints(cls)
    out = {}
    for key, text in pairs:
        if key not in hints:
            log.warning("ignoring unknown config key %r for %s", key, cls.__name__)
            continue
        out[key] = _coerce(hints[key], text)
    return out


def load_config(cls, path, **overrides):
    pairs = []
    for lineno, line in enumerate(open(path), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    values = parse_overrides(cls, pairs)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def replace(cfg, **changes):
    return dataclasses.replace(cfg, **{k: v for k, v in changes.items() if v is not None})
