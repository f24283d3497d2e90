"""Concept-overlap and length metrics on token lists."""
from __future__ import annotations

from ..corpus.lexicon import extract_concepts


def concept_recall(note, summary, lexicon):
    cn = extract_concepts(note, lexicon)
    if not cn:
        return 1.0
    return len(cn & extract_concepts(summary, lexicon)) / len(cn)


def concept_fdr(note, summary, lexicon):
    cs = extract_concepts(summary, lexicon)
    if not cs:
        return 0.0
    return len(cs - extract_concepts(note, lexicon)) / len(cs)


def length_ratio(note, summary):
    if len(note) == 0:
        raise ValueError("length_ratio: empty note")
    return len(summary) / len(note)


def document_metrics(note, summary, lexicon):
    return {"concept_recall": concept_recall(note, summary, lexicon),
            "concept_fdr": concept_fdr(note, summary, lexicon),
            "length_ratio": length_ratio(note, summary)}
