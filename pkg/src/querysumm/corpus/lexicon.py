"""Concept lexicon and greedy longest-match concept extraction."""
from __future__ import annotations

import json

N_PHENOTYPES = 25

PHENOTYPE_NAMES = [
    "acute renal failure", "acute cerebrovascular disease", "acute myocardial infarction",
    "cardiac dysrhythmias", "chronic kidney disease", "copd and bronchiectasis",
    "complications of surgical care", "conduction disorders", "congestive heart failure",
    "coronary atherosclerosis", "diabetes with complications", "diabetes without complication",
    "lipid metabolism disorders", "essential hypertension", "fluid and electrolyte disorders",
    "gastrointestinal hemorrhage", "hypertension with complications", "other liver diseases",
    "other lower respiratory disease", "other upper respiratory disease",
    "pleurisy and pneumothorax", "pneumonia", "respiratory failure", "septicemia", "shock",
]

# surface phrases per phenotype, most characteristic first
PHENOTYPE_PHRASES = [
    ["acute kidney injury", "creatinine rising", "oliguric"],
    ["acute stroke", "left sided weakness", "facial droop"],
    ["troponin elevated", "st elevation", "chest pain"],
    ["atrial fibrillation", "afib with rvr", "irregular rhythm"],
    ["chronic renal insufficiency", "on hemodialysis", "fistula site"],
    ["copd exacerbation", "wheezing", "home oxygen"],
    ["wound dehiscence", "surgical site drainage", "post op bleeding"],
    ["heart block", "pacer wires", "bradycardic"],
    ["heart failure", "pulmonary edema", "lasix drip"],
    ["coronary artery disease", "cabg", "angina"],
    ["diabetic ketoacidosis", "insulin drip", "anion gap"],
    ["diabetes", "fingerstick glucose", "sliding scale insulin"],
    ["hyperlipidemia", "statin", "high cholesterol"],
    ["hypertension", "htn", "lopressor"],
    ["hypokalemia", "potassium repleted", "hyponatremia"],
    ["gi bleed", "melena", "coffee ground emesis"],
    ["malignant hypertension", "hypertensive emergency", "labetalol drip"],
    ["cirrhosis", "ascites", "elevated lfts"],
    ["bronchitis", "productive cough", "chest congestion"],
    ["sinusitis", "nasal congestion", "sore throat"],
    ["pneumothorax", "chest tube", "pleural effusion"],
    ["pneumonia", "infiltrate on cxr", "rll consolidation"],
    ["respiratory failure", "intubated", "ventilator"],
    ["sepsis", "blood cultures positive", "bacteremia"],
    ["septic shock", "levophed", "pressors"],
]

RISK_PHRASES = ["lives alone", "noncompliant with medications", "frequent falls", "homeless"]

GENERIC_PHRASES = [
    "tylenol", "morphine", "foley catheter", "ng tube", "heart rate", "blood pressure",
    "lung sounds", "bowel sounds", "urine output", "fever", "nausea", "anxiety",
    "iv fluids", "sedation", "fentanyl", "propofol", "oxygen saturation", "pain medication",
    "physical therapy", "skin breakdown",
]


class ConceptLexicon:
    """Phrase -> concept id map with a token trie for longest-match lookup."""

    def __init__(self, entries):
        self.entries = {}
        for phrase, cid in entries.items():
            key = " ".join(phrase.lower().split())
            if key in self.entries:
                raise ValueError(f"duplicate surface phrase {key!r}")
            if not 1 <= len(key.split()) <= 4:
                raise ValueError(f"phrase {key!r} must have 1-4 tokens")
            self.entries[key] = cid
        self._trie = {}
        for phrase, cid in self.entries.items():
            node = self._trie
            for tok in phrase.split():
                node = node.setdefault(tok, {})
            node[None] = cid
        self.max_len = max((len(p.split()) for p in self.entries), default=0)

    def __len__(self):
        return len(self.entries)

    def concept_ids(self):
        return set(self.entries.values())

    def phrase_for(self, cid):
        for p, c in self.entries.items():
            if c == cid:
                return p
        raise KeyError(cid)

    def to_json(self):
        return json.dumps(self.entries, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        return cls(json.loads(text))

    def extract(self, tokens):
        """Set of concept ids matched greedily, longest phrase first, left to right."""
        toks = [t.lower() for t in tokens]
        found = set()
        i, n = 0, len(toks)
        while i < n:
            node, j, best = self._trie, i, None
            while j < n and toks[j] in node:
                node = node[toks[j]]
                j += 1
                if None in node:
                    best = (j, node[None])
            if best is None:
                i += 1
            else:
                found.add(best[1])
                i = best[0]
        return found


def extract_concepts(tokens, lexicon):
    return lexicon.extract(tokens)


def build_lexicon(size=None, concepts_per_phenotype=3):
    """The generator's lexicon plus the phrase pools it may draw from.

    Phenotype phrases come first (round robin over classes), then risk
    phrases, then generic phrases; `size` truncates that order.
    """
    if not 1 <= concepts_per_phenotype <= 3:
        raise ValueError("concepts_per_phenotype must be 1..3")
    ordered = []
    for r in range(concepts_per_phenotype):
        for k in range(N_PHENOTYPES):
            ordered.append(("pheno", k, PHENOTYPE_PHRASES[k][r]))
    ordered += [("risk", None, p) for p in RISK_PHRASES]
    ordered += [("generic", None, p) for p in GENERIC_PHRASES]
    minimum = N_PHENOTYPES + 1
    if size is None:
        size = len(ordered)
    if size < minimum:
        raise ValueError(f"lexicon size {size} is smaller than the {N_PHENOTYPES} phenotypes plus a risk concept")
    if size > len(ordered):
        raise ValueError(f"lexicon size {size} exceeds the {len(ordered)} available phrases")
    chosen = ordered[:size]
    # a risk phrase is required for the readmission signal
    if not any(kind == "risk" for kind, _, _ in chosen):
        chosen[-1] = ordered[len(ordered) - len(RISK_PHRASES) - len(GENERIC_PHRASES)]
    entries = {p: f"C{i:04d}" for i, (_, _, p) in enumerate(chosen)}
    pools = {
        "pheno": [[p for kind, k2, p in chosen if kind == "pheno" and k2 == k] for k in range(N_PHENOTYPES)],
        "risk": [p for kind, _, p in chosen if kind == "risk"],
        "generic": [p for kind, _, p in chosen if kind == "generic"],
    }
    return ConceptLexicon(entries), pools
