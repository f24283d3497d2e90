"""Closed word-level vocabulary shared by the summarizer and the responders."""
from __future__ import annotations

import json
from collections import Counter

from .records import metadata_to_text, split_words

PAD, BOS, EOS, UNK, TI, SEP = 0, 1, 2, 3, 4, 5
SPECIAL_TOKENS = ["[PAD]", "[BOS]", "[EOS]", "[UNK]", "[TI]", "[SEP]"]
CONTENT_START = len(SPECIAL_TOKENS)


class Vocabulary:
    def __init__(self, words):
        words = list(words)
        if words[:CONTENT_START] != SPECIAL_TOKENS:
            words = SPECIAL_TOKENS + [w for w in words if w not in SPECIAL_TOKENS]
        if len(set(words)) != len(words):
            raise ValueError("vocabulary words must be unique")
        self.itos = words
        self.stoi = {w: i for i, w in enumerate(words)}

    def __len__(self):
        return len(self.itos)

    @property
    def size(self):
        return len(self.itos)

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def tokenize(self, text):
        return self.encode(split_words(text))

    def detokenize(self, ids):
        return " ".join(self.decode(ids))

    def to_json(self):
        return json.dumps(self.itos, indent=0)

    @classmethod
    def from_json(cls, text):
        return cls(json.loads(text))


def build_vocabulary(admissions, max_size=2048):
    """Vocabulary from training admissions: note text plus metadata text."""
    counts = Counter()
    for adm in admissions:
        counts.update(split_words(metadata_to_text(adm.record)))
        for note in adm.notes:
            counts.update(note.tokens)
    words = sorted(counts, key=lambda w: (-counts[w], w))[: max_size - CONTENT_START]
    return Vocabulary(SPECIAL_TOKENS + sorted(words))
