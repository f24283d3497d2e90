"""Metric reports: JSON, a plain-text results table and per-document CSV."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .metrics import document_metrics

DOC_METRICS = ("concept_recall", "concept_fdr", "length_ratio")
# column order of the results table
COLUMNS = [("Recall", "concept_recall"), ("FDR", "concept_fdr"), ("Length", "length_ratio"),
           ("Weighted F1", "weighted_f1"), ("F1", "positive_f1"), ("Macro F1", "macro_f1")]


def summary_metrics(rows, lexicon):
    """`rows`: (note_id, note tokens, summary tokens). Per-document values plus mean/std."""
    per_doc = []
    for note_id, note, summary in sorted(rows, key=lambda r: r[0]):
        rec = {"note_id": note_id}
        rec.update(document_metrics(note, summary, lexicon))
        per_doc.append(rec)
    agg = {}
    for m in DOC_METRICS:
        vals = np.array([r[m] for r in per_doc], dtype=np.float64)
        agg[m] = {"mean": float(vals.mean()) if len(vals) else None,
                  "std_per_document": float(vals.std()) if len(vals) else None}
    return {"n_documents": len(per_doc), "aggregate": agg, "per_document": per_doc}


def build_report(method, metrics=None, predictiveness=None, extra=None):
    rep = {"method": method}
    if metrics is not None:
        rep["metrics"] = metrics
    if predictiveness is not None:
        rep["predictiveness"] = predictiveness
    if extra:
        rep.update(extra)
    return rep


def _cell(rep, key):
    if key in DOC_METRICS:
        agg = rep.get("metrics", {}).get("aggregate", {}).get(key)
        if not agg or agg["mean"] is None:
            return "-"
        return f"{100 * agg['mean']:.1f} ({100 * agg['std_per_document']:.1f})"
    pr = rep.get("predictiveness")
    if not pr or key not in pr:
        return "-"
    return f"{100 * pr[key]:.1f} ({100 * pr[f'{key}_std_per_fold']:.1f})"


def render_table(reports):
    """Fixed-width table; values are percentages with std in parentheses
    (per document for the concept and length columns, per fold for F1 columns)."""
    header = ["Method"] + [c for c, _ in COLUMNS]
    body = [[r["method"]] + [_cell(r, k) for _, k in COLUMNS] for r in reports]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    line = lambda row: "  ".join(x.ljust(w) for x, w in zip(row, widths)).rstrip()  # noqa: E731
    out = [line(header), line(["-" * w for w in widths])] + [line(r) for r in body]
    return "\n".join(out) + "\n"


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_per_doc_csv(path, per_document):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["note_id", "recall", "fdr", "length_ratio"])
        for r in per_document:
            w.writerow([r["note_id"], repr(r["concept_recall"]), repr(r["concept_fdr"]), repr(r["length_ratio"])])


def write_summaries(path, rows):
    """Summaries as JSONL {note_id, tokens, text}."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for note_id, tokens in sorted(rows, key=lambda r: r[0]):
            fh.write(json.dumps({"note_id": note_id, "tokens": list(tokens), "text": " ".join(tokens)},
                                sort_keys=True) + "\n")


def read_summaries(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["note_id"]] = list(rec["tokens"])
    return out
