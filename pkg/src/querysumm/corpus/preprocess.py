"""Note filtering and abbreviation expansion."""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .records import Admission

DEFAULT_ABBREVIATIONS = {"pt": "patient", "cv": "cardiovascular", "resp": "respiratory"}


@dataclass
class PreprocessRules:
    min_tokens: int = 50
    max_tokens: int = 800
    max_notes_per_admission: int = 100
    abbreviations: dict = field(default_factory=lambda: dict(DEFAULT_ABBREVIATIONS))


def expand_abbreviations(text, abbreviations=None):
    abbreviations = DEFAULT_ABBREVIATIONS if abbreviations is None else abbreviations
    if not abbreviations:
        return text
    pattern = re.compile(r"\b(" + "|".join(map(re.escape, sorted(abbreviations, key=len, reverse=True))) + r")\b")
    return pattern.sub(lambda m: abbreviations[m.group(1)], text)


def preprocess(admissions, rules=None):
    """Expand abbreviations, drop out-of-bounds nursing notes, then drop
    admissions with too many (or no) remaining notes; re-index contiguously.

    Length bounds apply to nursing notes only; discharge summaries are kept
    and placed after the last nursing note.
    """
    rules = rules or PreprocessRules()
    out = []
    for adm in admissions:
        kept = []
        for note in adm.nursing_notes:
            text = expand_abbreviations(note.text, rules.abbreviations)
            n = len(replace(note, text=text).tokens)
            if rules.min_tokens <= n <= rules.max_tokens:
                kept.append(replace(note, text=text))
        if not kept or len(kept) > rules.max_notes_per_admission:
            continue
        notes = [replace(n, seq_index=i + 1) for i, n in enumerate(kept)]
        ds = adm.discharge_summary
        if ds is not None:
            notes.append(replace(ds, text=expand_abbreviations(ds.text, rules.abbreviations),
                                 seq_index=len(kept) + 1))
        out.append(Admission(adm.record, notes))
    return out


def preprocess_corpus(corpus, rules=None):
    from .records import Corpus
    return Corpus({k: preprocess(v, rules) for k, v in corpus.splits.items()}, corpus.lexicon)
