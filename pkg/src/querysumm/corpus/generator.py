"""Synthetic EHR corpus with planted, learnable query signal.

Each admission gets a phenotype set, a latent readmission-risk flag and a
time-ordered run of nursing notes plus a discharge summary. Phenotype
phrases appear at random sentence positions, so prefix-based extracts miss
part of the signal.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .lexicon import N_PHENOTYPES, build_lexicon
from .records import Admission, Corpus, NursingNote, PatientRecord

PHENO_TEMPLATES = [
    "{pt} with {c} .", "{c} noted .", "hx of {c} .", "monitoring for {c} .",
    "md aware of {c} .", "continues with {c} .", "{c} , will follow .",
]
FALSE_TEMPLATES = ["r/o {c} .", "no signs of {c} .", "{pt} denies {c} ."]
RISK_TEMPLATES = ["{pt} {c} per family .", "social work aware {pt} {c} .", "concern that {pt} {c} ."]
GENERIC_TEMPLATES = ["{c} given .", "{c} monitored .", "{c} within normal limits .", "{c} adjusted per md ."]
FILLER_TEMPLATES = [
    "{pt} resting comfortably in bed .",
    "{resp} : lungs clear bilaterally .",
    "{resp} : on room air , sats 95 % .",
    "{cv} : nsr , hr 80s .",
    "{cv} : sbp 110s - 130s .",
    "neuro : alert and oriented x3 .",
    "neuro : {pt} follows commands , moves all extremities .",
    "gi : abdomen soft , nontender .",
    "gu : voiding clear yellow urine .",
    "skin : intact , no redness noted .",
    "plan : continue to monitor closely .",
    "family in to visit , updated on plan .",
    "will continue current plan of care .",
    "{pt} tolerating diet well .",
    "{pt} ambulated in hallway with assist .",
    "no acute events overnight .",
    "{pt} slept well overnight .",
    "labs drawn and sent .",
    "id : afebrile , wbc stable .",
    "access : piv intact and patent .",
]

# phenotype prevalence profile (fixed, so class frequencies are config-independent)
PREVALENCE = np.array([0.06 + 0.3 * ((7 * k) % N_PHENOTYPES) / (N_PHENOTYPES - 1) for k in range(N_PHENOTYPES)])


@dataclass
class GeneratorConfig:
    n_train: int = 400
    n_val: int = 50
    n_test: int = 50
    min_notes: int = 2
    max_notes: int = 12
    min_tokens: int = 50
    max_tokens: int = 120
    lexicon_size: int | None = None
    concepts_per_phenotype: int = 3
    max_phenotypes: int = 4
    mention_rate: float = 0.95
    false_mention_rate: float = 0.05
    risk_rate: float = 0.3
    risk_mention_rate: float = 0.7
    abbreviation_rate: float = 0.3
    force_phenotype: int | None = None

    def validate(self):
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 1 <= self.min_notes <= self.max_notes:
            raise ValueError("need 1 <= min_notes <= max_notes")
        if not 10 <= self.min_tokens < self.max_tokens:
            raise ValueError("need 10 <= min_tokens < max_tokens")
        if not 1 <= self.max_phenotypes <= N_PHENOTYPES:
            raise ValueError("max_phenotypes out of range")
        for name in ("mention_rate", "false_mention_rate", "risk_rate", "risk_mention_rate", "abbreviation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.force_phenotype is not None and not 0 <= self.force_phenotype < N_PHENOTYPES:
            raise ValueError("force_phenotype out of range")

    def to_dict(self):
        return asdict(self)


def _abbrev(template, rng, rate):
    return template.format(
        pt="pt" if rng.random() < rate else "patient",
        resp="resp" if rng.random() < rate else "respiratory",
        cv="cv" if rng.random() < rate else "cardiovascular",
        c="{c}",
    )


def _sentence(templates, phrase, rng, rate):
    t = templates[rng.integers(len(templates))]
    return _abbrev(t, rng, rate).replace("{c}", phrase)


def _codes(k, rng):
    pool = [f"d{100 + (37 * k + 11) % 850}{j}" for j in range(3)]
    return [str(c) for c in rng.choice(pool, size=int(rng.integers(1, 3)), replace=False)]


def _patient(cfg, rng, patient_id, admission_id):
    n_ph = int(rng.integers(1, cfg.max_phenotypes + 1))
    probs = PREVALENCE / PREVALENCE.sum()
    chosen = set(rng.choice(N_PHENOTYPES, size=n_ph, replace=False, p=probs).tolist())
    if cfg.force_phenotype is not None:
        chosen.add(cfg.force_phenotype)
    labels = [k in chosen for k in range(N_PHENOTYPES)]
    risk = bool(rng.random() < cfg.risk_rate)
    logit = -2.4 + 0.4 * len(chosen) + 2.4 * risk
    readmit = bool(rng.random() < 1.0 / (1.0 + np.exp(-logit)))
    dx = []
    for k in sorted(chosen):
        dx += _codes(k, rng)
    dx += [f"v{int(rng.integers(10, 60))}" for _ in range(int(rng.integers(0, 2)))]
    n_proc = int(rng.integers(0, 3))
    proc = sorted({f"p{int(rng.integers(30, 99))}" for _ in range(n_proc)})
    rec = PatientRecord(
        patient_id=patient_id, admission_id=admission_id,
        gender="F" if rng.random() < 0.5 else "M", age_years=int(rng.integers(18, 91)),
        diagnosis_codes=dx, procedure_codes=proc, phenotype_labels=labels, readmitted_30d=readmit,
    )
    return rec, sorted(chosen), risk


def _note_text(cfg, rng, pools, chosen, risk):
    rate = cfg.abbreviation_rate
    core = []
    for k in chosen:
        if pools["pheno"][k] and rng.random() < cfg.mention_rate:
            core.append(_sentence(PHENO_TEMPLATES, pools["pheno"][k][rng.integers(len(pools["pheno"][k]))], rng, rate))
    if risk and pools["risk"] and rng.random() < cfg.risk_mention_rate:
        core.append(_sentence(RISK_TEMPLATES, pools["risk"][rng.integers(len(pools["risk"]))], rng, rate))
    if rng.random() < cfg.false_mention_rate:
        others = [k for k in range(N_PHENOTYPES) if k not in chosen and pools["pheno"][k]]
        k = others[rng.integers(len(others))]
        core.append(_sentence(FALSE_TEMPLATES, pools["pheno"][k][rng.integers(len(pools["pheno"][k]))], rng, rate))
    if pools["generic"]:
        for _ in range(int(rng.integers(1, 3))):
            core.append(_sentence(GENERIC_TEMPLATES, pools["generic"][rng.integers(len(pools["generic"]))], rng, rate))
    target = int(rng.integers(cfg.min_tokens + 5, cfg.max_tokens - 4))
    sentences = list(core)
    length = sum(len(s.split()) for s in sentences)
    while length < target:
        s = _abbrev(FILLER_TEMPLATES[rng.integers(len(FILLER_TEMPLATES))], rng, rate)
        if length + len(s.split()) > cfg.max_tokens - 2:
            break
        sentences.append(s)
        length += len(s.split())
    order = rng.permutation(len(sentences))
    return " ".join(sentences[i] for i in order)


def _discharge_text(cfg, rng, pools, chosen, risk):
    rate = cfg.abbreviation_rate
    phrases = [pools["pheno"][k][0] for k in chosen if pools["pheno"][k]]
    parts = [_abbrev("discharge summary : {pt} admitted with", rng, rate), " , ".join(phrases), "."]
    parts.append("hospital course notable for " + " and ".join(
        pools["pheno"][k][-1] for k in chosen if pools["pheno"][k]) + " .")
    if risk and pools["risk"]:
        parts.append(_sentence(RISK_TEMPLATES, pools["risk"][rng.integers(len(pools["risk"]))], rng, rate))
    for _ in range(int(rng.integers(2, 5))):
        parts.append(_abbrev(FILLER_TEMPLATES[rng.integers(len(FILLER_TEMPLATES))], rng, rate))
    parts.append("discharged home in stable condition .")
    return " ".join(parts)


def generate_corpus(cfg=None, seed=0):
    """Build train/val/test splits and the concept lexicon from (cfg, seed)."""
    cfg = cfg or GeneratorConfig()
    cfg.validate()
    lexicon, pools = build_lexicon(cfg.lexicon_size, cfg.concepts_per_phenotype)
    splits = {}
    counter = 0
    for split_code, (name, count) in enumerate((("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test))):
        adms = []
        for i in range(count):
            counter += 1
            rng = np.random.default_rng([seed, split_code, i])
            rec, chosen, risk = _patient(cfg, rng, f"P{counter:05d}", f"A{counter:05d}")
            m = int(rng.integers(cfg.min_notes, cfg.max_notes + 1))
            notes = [NursingNote(rec.admission_id, rec.patient_id, j + 1, _note_text(cfg, rng, pools, chosen, risk))
                     for j in range(m)]
            notes.append(NursingNote(rec.admission_id, rec.patient_id, m + 1,
                                     _discharge_text(cfg, rng, pools, chosen, risk), is_discharge_summary=True))
            adms.append(Admission(rec, notes))
        splits[name] = adms
    return Corpus(splits, lexicon)
