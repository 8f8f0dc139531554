"""Plot-ready text artifacts: accuracy-by-length curves and stage breakdowns."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence


def length_curve(csv_path, out_path):
    """Two columns, ``length accuracy``, one row per evaluated length."""
    with open(csv_path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"length", "exact_match"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{csv_path}: missing column(s) {sorted(missing)}")
        rows = [(int(r["length"]), float(r["exact_match"])) for r in reader]
    with open(out_path, "w") as f:
        f.write("# length accuracy\n")
        for length, acc in rows:
            f.write(f"{length} {acc:.6f}\n")
    return rows


@dataclass
class Breakdown:
    freq: Optional[float]        # multiset correct, percent
    seq: Optional[float]         # full output correct, percent
    seq_given_freq: Optional[float]

    def format(self) -> str:
        f = lambda v: "n/a" if v is None else f"{v:.1f}"
        return (f"{'Freq':>8} {'Seq':>8} {'Seq/Freq':>8}\n"
                f"{f(self.freq):>8} {f(self.seq):>8} {f(self.seq_given_freq):>8}\n")


def breakdown(freq_ok: Sequence[bool], seq_ok: Sequence[bool]) -> Breakdown:
    if len(freq_ok) != len(seq_ok):
        raise ValueError("flag lists differ in length")
    if any(s and not f for f, s in zip(freq_ok, seq_ok)):
        raise ValueError("a correct sequence with a wrong multiset is impossible")
    n = len(freq_ok)
    n_freq = sum(map(bool, freq_ok))
    n_seq = sum(map(bool, seq_ok))
    pct = lambda a, b: 100.0 * a / b if b else None
    return Breakdown(pct(n_freq, n), pct(n_seq, n), pct(n_seq, n_freq))
