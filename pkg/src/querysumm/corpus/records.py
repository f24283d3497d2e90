"""Clinical document records, the corpus container, and JSONL persistence."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .lexicon import N_PHENOTYPES, ConceptLexicon

_TOKEN_RE = re.compile(r"[a-z0-9_/]+|[^\sa-z0-9_/]")


def split_words(text):
    """Lowercased word-level tokens; punctuation marks are separate tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class PatientRecord:
    patient_id: str
    admission_id: str
    gender: str
    age_years: int
    diagnosis_codes: list
    procedure_codes: list
    phenotype_labels: list
    readmitted_30d: bool

    def __post_init__(self):
        if self.gender not in ("F", "M"):
            raise ValueError(f"gender must be F or M, got {self.gender!r}")
        if len(self.phenotype_labels) != N_PHENOTYPES:
            raise ValueError(f"phenotype vector must have {N_PHENOTYPES} entries")
        if self.age_years < 0:
            raise ValueError("age must be non-negative")
        self.phenotype_labels = [bool(x) for x in self.phenotype_labels]
        self.readmitted_30d = bool(self.readmitted_30d)


@dataclass
class NursingNote:
    admission_id: str
    patient_id: str
    seq_index: int
    text: str
    is_discharge_summary: bool = False

    @property
    def tokens(self):
        return split_words(self.text)

    @property
    def note_id(self):
        return f"{self.admission_id}-{self.seq_index}"


@dataclass
class Admission:
    record: PatientRecord
    notes: list = field(default_factory=list)

    @property
    def admission_id(self):
        return self.record.admission_id

    @property
    def nursing_notes(self):
        return sorted((n for n in self.notes if not n.is_discharge_summary), key=lambda n: n.seq_index)

    @property
    def discharge_summary(self):
        for n in self.notes:
            if n.is_discharge_summary:
                return n
        return None


@dataclass
class Corpus:
    splits: dict  # name -> list[Admission]
    lexicon: ConceptLexicon

    def split(self, name):
        return self.splits[name]

    def notes(self, name):
        return [n for adm in self.splits[name] for n in adm.nursing_notes]

    def check_disjoint(self):
        seen = {}
        for name, adms in self.splits.items():
            for adm in adms:
                if adm.admission_id in seen:
                    raise ValueError(f"admission {adm.admission_id} in both {seen[adm.admission_id]} and {name}")
                seen[adm.admission_id] = name


SPLITS = ("train", "val", "test")


def metadata_to_text(p):
    """Render patient metadata as one lowercase sentence group."""
    gender = {"F": "female", "M": "male"}[p.gender]
    dx = " , ".join(c.lower() for c in p.diagnosis_codes) or "none"
    proc = " , ".join(c.lower() for c in p.procedure_codes) or "none"
    return f"patient is a {p.age_years} year old {gender} . diagnoses : {dx} . procedures : {proc} ."


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_corpus(corpus, root):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "lexicon.json").write_text(corpus.lexicon.to_json() + "\n", encoding="utf-8")
    for name, adms in corpus.splits.items():
        d = root / name
        d.mkdir(exist_ok=True)
        _write_jsonl(d / "patients.jsonl", [asdict(a.record) for a in adms])
        _write_jsonl(d / "notes.jsonl", [asdict(n) for a in adms for n in sorted(a.notes, key=lambda n: n.seq_index)])


def load_corpus(root):
    """Read a corpus directory: lexicon.json plus <split>/{patients,notes}.jsonl.

    Real-data users must pre-filter newborn and in-hospital mortality
    admissions before writing files in this format.
    """
    root = Path(root)
    lexicon = ConceptLexicon.from_json((root / "lexicon.json").read_text(encoding="utf-8"))
    splits = {}
    for name in SPLITS:
        d = root / name
        if not d.exists():
            continue
        adms = {}
        order = []
        for row in _read_jsonl(d / "patients.jsonl"):
            rec = PatientRecord(**row)
            adms[rec.admission_id] = Admission(rec)
            order.append(rec.admission_id)
        for row in _read_jsonl(d / "notes.jsonl"):
            note = NursingNote(**row)
            if note.admission_id not in adms:
                raise ValueError(f"note for unknown admission {note.admission_id}")
            adms[note.admission_id].notes.append(note)
        splits[name] = [adms[a] for a in order]
    corpus = Corpus(splits, lexicon)
    corpus.check_disjoint()
    return corpus
