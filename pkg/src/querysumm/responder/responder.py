"""Query responders: small transformer encoders with classification heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..corpus.lexicon import N_PHENOTYPES
from ..corpus.vocab import BOS, PAD, SEP
from ..model import layers as L
from ..substrate import ParamStore, Tensor, ops

KINDS = ("readmission", "phenotype", "combined", "nextnote", "similarity")
HEADS_FOR = {"readmission": ("re",), "phenotype": ("ph",), "combined": ("re", "ph"), "nextnote": ("nn",),
             "similarity": ()}
HEAD_DIM = {"re": 2, "ph": N_PHENOTYPES, "nn": 2}


@dataclass(frozen=True)
class QuerySpec:
    kind: str
    d: int = 64

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown query kind {self.kind!r}; expected one of {KINDS}")

    @property
    def output_dim(self):
        return {"readmission": 2, "phenotype": N_PHENOTYPES, "combined": 2 * N_PHENOTYPES,
                "nextnote": 2, "similarity": self.d}[self.kind]


@dataclass
class ResponderConfig:
    vs: int
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 128
    max_len: int = 256
    init_seed: int = 0

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError("d must be divisible by n_heads")

    def to_dict(self):
        return asdict(self)


def combine_re_ph(p_re, p_ph):
    """Flattened outer product, out[2k + r] = p_re[r] * p_ph[k]; works on (.., 2) x (.., 25)."""
    for name, p in (("p_re", p_re), ("p_ph", p_ph)):
        d = p.data if isinstance(p, Tensor) else np.asarray(p)
        if (d < 0).any() or np.abs(d.sum(axis=-1) - 1.0).max() > 1e-6:
            raise ValueError(f"combine_re_ph: {name} is not a distribution")
    p_re = p_re if isinstance(p_re, Tensor) else Tensor(p_re)
    p_ph = p_ph if isinstance(p_ph, Tensor) else Tensor(p_ph)
    lead = p_ph.shape[:-1]
    outer = ops.mul(ops.reshape(p_ph, lead + (p_ph.shape[-1], 1)), ops.reshape(p_re, lead + (1, 2)))
    return ops.reshape(outer, lead + (2 * p_ph.shape[-1],))


class QueryResponder:
    """Encoder + mean pool + heads. `kind` selects which heads answer queries."""

    def __init__(self, cfg, kind, store=None):
        self.cfg = cfg
        self.spec = QuerySpec(kind, cfg.d)
        self.heads = HEADS_FOR[kind]
        if store is None:
            store = ParamStore()
            rng = np.random.default_rng(cfg.init_seed)
            store.add("tok_emb", rng.normal(0.0, 1.0 / np.sqrt(cfg.d), size=(cfg.vs, cfg.d)))
            L.init_encoder(store, "enc", cfg.n_layers, cfg.d, cfg.ff_dim, cfg.max_len, rng)
            for h in self.heads:
                L.init_linear(store, f"head.{h}", cfg.d, HEAD_DIM[h], rng)
        self.store = store

    @property
    def kind(self):
        return self.spec.kind

    @property
    def frozen(self):
        return all(self.store.is_frozen(n) for n in self.store.names())

    def freeze(self):
        self.store.freeze()
        return self

    def as_kind(self, kind):
        """Same parameters answering another query the heads support."""
        need = HEADS_FOR[kind]
        missing = [h for h in need if f"head.{h}.w" not in self.store]
        if missing:
            raise ValueError(f"responder of kind {self.kind!r} has no head for {kind!r}")
        r = QueryResponder.__new__(QueryResponder)
        r.cfg, r.spec, r.heads, r.store = self.cfg, QuerySpec(kind, self.cfg.d), need, self.store
        return r

    # ------------------------------------------------------------ inputs
    def _check_len(self, n):
        if n > self.cfg.max_len:
            raise ValueError(f"responder input of {n} tokens exceeds max_len {self.cfg.max_len}")

    def embed_ids(self, seqs):
        """Token-id docs -> (x (B, T, d), mask); each doc is prefixed with [BOS]."""
        full = [[BOS] + list(s) for s in seqs]
        for s in full:
            self._check_len(len(s))
        ids, mask = L.pad_ids(full, PAD)
        return ops.embedding(ids, self.store["tok_emb"]), mask

    def embed_rows(self, docs):
        """Docs given as lists of segments, each segment an id list or a (n, vs) one-hot Tensor.

        Rows are laid out back to back behind [BOS], then zero-padded.
        """
        E = self.store["tok_emb"]
        seqs, lengths = [], []
        for segs in docs:
            parts = [ops.getitem(E, np.array([BOS]))]
            for seg in segs:
                if isinstance(seg, Tensor):
                    parts.append(ops.embed_one_hot(seg, E))
                elif len(seg):
                    parts.append(ops.embedding(np.asarray(seg, dtype=np.int64), E))
            x = ops.concat(parts, axis=0)
            self._check_len(x.shape[0])
            seqs.append(x)
            lengths.append(x.shape[0])
        T = max(lengths)
        padded = [x if x.shape[0] == T else ops.concat([x, Tensor(np.zeros((T - x.shape[0], self.cfg.d)))], axis=0)
                  for x in seqs]
        mask = np.arange(T)[None, :] < np.array(lengths)[:, None]
        return ops.stack(padded, axis=0), mask

    # ------------------------------------------------------------ core
    def pooled(self, x, mask):
        H = L.encoder_stack(self.store, "enc", x, mask, self.cfg.n_layers, self.cfg.n_heads)
        w = mask.astype(np.float64)
        s = ops.sum(ops.mul(H, w[:, :, None]), axis=1)
        return ops.mul(s, 1.0 / w.sum(axis=1, keepdims=True))

    def head_logits(self, pooled, head):
        return L.linear(self.store, f"head.{head}", pooled)

    def answer(self, pooled):
        """Map pooled features (B, d) to the query's output (B, output_dim)."""
        k = self.kind
        if k == "similarity":
            return pooled
        if k in ("readmission", "nextnote"):
            return ops.softmax(self.head_logits(pooled, self.heads[0]), axis=-1)
        p_ph = ops.sigmoid(self.head_logits(pooled, "ph"))
        p_ph = ops.div(p_ph, ops.sum(p_ph, axis=-1, keepdims=True))
        if k == "phenotype":
            return p_ph
        p_re = ops.softmax(self.head_logits(pooled, "re"), axis=-1)
        return combine_re_ph(p_re, p_ph)

    # ------------------------------------------------------------ public API
    def respond_batch(self, docs):
        """Answers for a batch of id-list docs."""
        if self.kind == "nextnote":
            raise ValueError("nextnote queries take pairs; use respond_pair")
        if any(len(d) == 0 for d in docs):
            raise ValueError("respond: empty document")
        return self.answer(self.pooled(*self.embed_ids(docs)))

    def respond_segments(self, docs):
        """Answers for docs built from id/one-hot segments (see embed_rows)."""
        return self.answer(self.pooled(*self.embed_rows(docs)))

    def respond(self, doc):
        """Answer for one doc: an id list or a (n, vs) one-hot Tensor."""
        if self.kind == "nextnote":
            raise ValueError("nextnote queries take pairs; use respond_pair")
        n = doc.shape[0] if isinstance(doc, Tensor) else len(doc)
        if n == 0:
            raise ValueError("respond: empty document")
        out = self.respond_segments([[doc]]) if isinstance(doc, Tensor) else self.respond_batch([doc])
        return ops.getitem(out, 0)

    def pair_segments(self, a, b):
        return [a, [SEP], b]

    def respond_pairs(self, pairs):
        """[p_pos, p_neg] for each (a, b); a and b may be id lists or one-hot Tensors."""
        for a, b in pairs:
            na = a.shape[0] if isinstance(a, Tensor) else len(a)
            nb = b.shape[0] if isinstance(b, Tensor) else len(b)
            if na == 0 or nb == 0:
                raise ValueError("respond_pair: empty document")
        x, mask = self.embed_rows([self.pair_segments(a, b) for a, b in pairs])
        r = self if self.kind == "nextnote" else self.as_kind("nextnote")
        return r.answer(r.pooled(x, mask))

    def respond_pair(self, a, b):
        return ops.getitem(self.respond_pairs([(a, b)]), 0)
