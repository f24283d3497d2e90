"""Aggregation of 1-5 manual scores with an exact two-sided sign test."""
from __future__ import annotations

from fractions import Fraction
from math import comb

METRICS = ("informativeness", "fluency", "consistency", "relevance")


class ManualScoreSheet:
    def __init__(self, rows):
        self.scores = {}
        for row in rows:
            key = (str(row["note_id"]), str(row["method"]))
            if key in self.scores:
                raise ValueError(f"duplicate score row for note {key[0]} method {key[1]}")
            vals = {}
            for m in METRICS:
                v = row[m]
                if int(v) != v or not 1 <= v <= 5:
                    raise ValueError(f"score {m}={v!r} for {key} outside 1..5")
                vals[m] = int(v)
            self.scores[key] = vals

    def notes(self, method):
        return {n for n, m in self.scores if m == method}


def binomial_two_tailed(w, l):
    """p = 2 min(P(X <= min), P(X >= max)) under Binomial(w + l, 1/2), capped at 1; None if n = 0."""
    n = w + l
    if n == 0:
        return None
    lo, hi = min(w, l), max(w, l)
    total = 2 ** n
    p_lo = Fraction(sum(comb(n, k) for k in range(0, lo + 1)), total)
    p_hi = Fraction(sum(comb(n, k) for k in range(hi, n + 1)), total)
    return float(min(Fraction(1), 2 * min(p_lo, p_hi)))


def manual_agg(sheet, method_a, method_b):
    notes_a, notes_b = sheet.notes(method_a), sheet.notes(method_b)
    if notes_a != notes_b:
        raise ValueError(f"methods cover different notes: {sorted(notes_a ^ notes_b)}")
    if not notes_a:
        raise ValueError("no scored notes for these methods")
    out = {}
    notes = sorted(notes_a)
    for m in METRICS:
        a = [sheet.scores[(n, method_a)][m] for n in notes]
        b = [sheet.scores[(n, method_b)][m] for n in notes]
        w = sum(x > y for x, y in zip(a, b))
        l = sum(x < y for x, y in zip(a, b))
        p = binomial_two_tailed(w, l)
        out[m] = {"mean_a": sum(a) / len(a), "mean_b": sum(b) / len(b), "wins": w, "losses": l,
                  "ties": len(a) - w - l, "n": w + l, "p_value": p, "applicable": p is not None}
    return out
