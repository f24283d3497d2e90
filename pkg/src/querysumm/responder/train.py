"""Supervised training of query responders, next-note pairs, checkpoints."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..corpus.lexicon import N_PHENOTYPES
from ..model.checkpoint import load_store, read_checkpoint, save_checkpoint
from ..substrate import AdamState, ParamStore, adam_step, backward, no_grad, ops
from .responder import QueryResponder, ResponderConfig

log = logging.getLogger(__name__)

TRAINABLE_KINDS = ("readmission", "phenotype", "combined", "nextnote")


@dataclass
class ResponderTrainConfig:
    epochs: int = 4
    lr: float = 3e-3
    batch_size: int = 16
    pos_ratio: float = 1.0      # readmitted : not-readmitted after resampling
    n_samples: int | None = None
    clip: float = 1.0
    seed: int = 0
    subsample_prob: float = 0.5  # chance a training doc is replaced by a random token subsequence

    def __post_init__(self):
        if not 0.0 <= self.subsample_prob <= 1.0:
            raise ValueError("subsample_prob must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- data

def note_ids(vocab, note, cap):
    return vocab.tokenize(note.text)[:cap]


def make_nextnote_pairs(admissions, seed=0):
    """(N, N_pos, N_neg) triples: successor (or discharge summary) as positive,
    a non-consecutive note of the same admission, or for last notes a note of
    another patient, as negative."""
    rng = np.random.default_rng(seed)
    pool = [(a.record.patient_id, n) for a in admissions for n in a.nursing_notes]
    triples = []
    for adm in admissions:
        notes = adm.nursing_notes
        ds = adm.discharge_summary
        pid = adm.record.patient_id
        others = [n for p, n in pool if p != pid]
        for j, note in enumerate(notes):
            last = j == len(notes) - 1
            if last and ds is None:
                continue
            pos = ds if last else notes[j + 1]
            same = [] if last else [n for n in notes if n.seq_index not in (note.seq_index, note.seq_index + 1)]
            cands = same if same else others
            if not cands:
                continue
            neg = cands[int(rng.integers(len(cands)))]
            triples.append((note, pos, neg))
    return triples


def resample_binary(labels, ratio, n, rng):
    """Indices giving `ratio` positives per negative over `n` samples.

    Positives are oversampled (with replacement when short); negatives are
    undersampled (without replacement when enough exist).
    """
    labels = np.asarray(labels, dtype=bool)
    pos, neg = np.flatnonzero(labels), np.flatnonzero(~labels)
    n_pos = int(round(n * ratio / (1.0 + ratio)))
    n_neg = n - n_pos
    take_pos = rng.choice(pos, n_pos, replace=n_pos > len(pos))
    take_neg = rng.choice(neg, n_neg, replace=n_neg > len(neg))
    idx = np.concatenate([take_pos, take_neg])
    return idx[rng.permutation(len(idx))]


def class_census(kind, examples):
    if kind in ("readmission", "combined"):
        re = np.array([e[1]["re"] for e in examples])
        census = {"readmitted": int((re == 0).sum()), "not_readmitted": int((re == 1).sum())}
        if min(census.values()) == 0:
            raise ValueError(f"readmission class absent from training data: {census}")
    if kind in ("phenotype", "combined"):
        ph = np.array([e[1]["ph"] for e in examples]).reshape(-1, N_PHENOTYPES)
        counts = ph.sum(axis=0).astype(int)
        if (counts == 0).any():
            raise ValueError(f"phenotype classes absent from training data: "
                             f"{ {k: int(c) for k, c in enumerate(counts)} }")
    if kind == "nextnote":
        nn = np.array([e[1]["nn"] for e in examples])
        if len(set(nn.tolist())) < 2:
            raise ValueError(f"nextnote pairs need both classes: {np.bincount(nn, minlength=2).tolist()}")


def targets_for(record):
    return {"re": 0 if record.readmitted_30d else 1, "ph": np.array(record.phenotype_labels, dtype=np.float64)}


def build_examples(admissions, vocab, kind, max_len, seed=0):
    """(doc, targets) examples; doc is an id list, or an (a, b) id pair for nextnote."""
    if kind == "nextnote":
        cap = (max_len - 2) // 2
        out = []
        for n, p, q in make_nextnote_pairs(admissions, seed):
            a = note_ids(vocab, n, cap)
            out.append(((a, note_ids(vocab, p, cap)), {"nn": 0}))
            out.append(((a, note_ids(vocab, q, cap)), {"nn": 1}))
        return out
    return [(note_ids(vocab, n, max_len - 1), targets_for(adm.record))
            for adm in admissions for n in adm.nursing_notes]


def subsample_doc(ids, rng):
    """Ordered random subsequence at a keep rate drawn from U(0.05, 1); never empty."""
    keep = rng.random(len(ids)) < rng.uniform(0.05, 1.0)
    if not keep.any():
        keep[int(rng.integers(len(ids)))] = True
    return [t for t, k in zip(ids, keep) if k]


# ---------------------------------------------------------------- losses

def bce_logits(z, y):
    """Binary cross-entropy of logits z (B, C) against {0,1} targets, summed over classes, mean over rows."""
    pair = ops.stack([z, ops.mul(z, 0.0)], axis=-1)
    return ops.scale(ops.cross_entropy_ids(pair, (1 - np.asarray(y)).astype(np.int64)), z.shape[-1])


def batch_loss(resp, docs, tgts, heads):
    if "nn" in heads:
        x, mask = resp.embed_rows([resp.pair_segments(a, b) for a, b in docs])
    else:
        x, mask = resp.embed_ids(docs)
    pooled = resp.pooled(x, mask)
    loss = None
    for h in heads:
        z = resp.head_logits(pooled, h)
        if h == "ph":
            term = bce_logits(z, np.stack([t["ph"] for t in tgts]))
        else:
            term = ops.cross_entropy_ids(z, np.array([t[h] for t in tgts]))
        loss = term if loss is None else ops.add(loss, term)
    return loss


def fit(resp, examples, hyper, heads=None, order=None):
    """Minibatch Adam over `examples`; `order` optionally fixes the sample list per epoch."""
    heads = heads or resp.heads
    rng = np.random.default_rng(hyper.seed)
    state = AdamState(lr=hyper.lr)
    losses = []
    for epoch in range(hyper.epochs):
        idx = (order(epoch, rng) if order is not None else rng.permutation(len(examples)))
        for b in range(0, len(idx), hyper.batch_size):
            chunk = [examples[i] for i in idx[b : b + hyper.batch_size]]
            docs = [c[0] for c in chunk]
            if hyper.subsample_prob > 0 and "nn" not in heads:
                docs = [subsample_doc(d, rng) if len(d) and rng.random() < hyper.subsample_prob else d
                        for d in docs]
            loss = batch_loss(resp, docs, [c[1] for c in chunk], heads)
            backward(loss)
            resp.store.clip_grad_norm(hyper.clip)
            adam_step(resp.store, state)
            losses.append(loss.item())
        log.info("responder epoch %d mean loss %.4f", epoch, np.mean(losses[-max(1, len(idx) // hyper.batch_size):]))
    return losses


def train_responder(admissions, vocab, kind, rcfg=None, hyper=None):
    """Train a responder for `kind` on training admissions; returns it frozen."""
    if kind not in TRAINABLE_KINDS:
        raise ValueError(f"cannot train a responder for {kind!r}; choose from {TRAINABLE_KINDS}")
    rcfg = rcfg or ResponderConfig(vs=len(vocab))
    hyper = hyper or ResponderTrainConfig()
    examples = build_examples(admissions, vocab, kind, rcfg.max_len, hyper.seed)
    if not examples:
        raise ValueError("no training examples")
    class_census(kind, examples)
    resp = QueryResponder(rcfg, kind)
    fit_kind(resp, examples, hyper)
    return resp.freeze()


def fit_kind(resp, examples, hyper):
    """`fit` with readmission resampling whenever the responder has a readmission head."""
    order = None
    if "re" in resp.heads:
        labels = [e[1]["re"] == 0 for e in examples]
        n = hyper.n_samples or len(examples)
        if 0 < sum(labels) < len(labels):
            def order(epoch, rng):
                return resample_binary(labels, hyper.pos_ratio, n, rng)
    return fit(resp, examples, hyper, order=order)


def unfrozen_copy(resp):
    store = ParamStore()
    for name, t in resp.store.items():
        store.add(name, t.data.copy())
    return QueryResponder(resp.cfg, resp.kind, store)


def predict(resp, docs, batch_size=32):
    """Numpy outputs per head for id-list docs (pairs for nextnote)."""
    out = {h: [] for h in resp.heads}
    with no_grad():
        for b in range(0, len(docs), batch_size):
            chunk = docs[b : b + batch_size]
            if "nn" in resp.heads:
                x, mask = resp.embed_rows([resp.pair_segments(a, c) for a, c in chunk])
            else:
                x, mask = resp.embed_ids(chunk)
            pooled = resp.pooled(x, mask)
            for h in resp.heads:
                z = resp.head_logits(pooled, h)
                out[h].append((ops.sigmoid(z) if h == "ph" else ops.softmax(z, axis=-1)).data)
    return {h: np.concatenate(v) for h, v in out.items()}


# ---------------------------------------------------------------- checkpoints

def save_responder(path, resp, extra=None):
    save_checkpoint(path, resp.store, resp.cfg.to_dict(), f"responder:{resp.kind}", extra)


def load_responder(path, kind=None):
    doc = read_checkpoint(path)
    if not doc["kind"].startswith("responder:"):
        raise ValueError(f"{path}: not a responder checkpoint ({doc['kind']!r})")
    stored_kind = doc["kind"].split(":", 1)[1]
    cfg = ResponderConfig(**doc["config"])
    ref = QueryResponder(cfg, stored_kind)
    resp = QueryResponder(cfg, stored_kind, load_store(doc["params"], ref.store))
    if kind is not None and kind != stored_kind:
        resp = resp.as_kind(kind)
    return resp
