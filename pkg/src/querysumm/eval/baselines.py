"""Extractive baselines: Lead-k prefix and TextRank sentence selection."""
from __future__ import annotations

import math

import numpy as np

DAMPING = 0.85
TOL = 1e-8


def lead_k(tokens, fraction=0.4):
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    return list(tokens[: math.ceil(fraction * len(tokens))])


def split_sentences(tokens, delimiter="."):
    """Sentences end at (and include) each delimiter token; a trailing fragment is kept."""
    out, cur = [], []
    for t in tokens:
        cur.append(t)
        if t == delimiter:
            out.append(cur)
            cur = []
    if cur:
        out.append(cur)
    return out


def similarity_graph(emb):
    """Cosine similarities clipped at zero, no self loops."""
    emb = np.asarray(emb, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    unit = emb / np.where(norms > 0, norms, 1.0)
    W = np.clip(unit @ unit.T, 0.0, None)
    np.fill_diagonal(W, 0.0)
    return W


def transition_matrix(W):
    """Row-stochastic walk matrix; rows without edges jump uniformly."""
    n = W.shape[0]
    rows = W.sum(axis=1, keepdims=True)
    return np.where(rows > 0, W / np.where(rows > 0, rows, 1.0), 1.0 / n)


def pagerank(W, damping=DAMPING, tol=TOL, max_iter=10000):
    n = W.shape[0]
    M = transition_matrix(W)
    r = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = damping * (M.T @ r) + (1.0 - damping) / n
        nxt /= nxt.sum()
        if np.abs(nxt - r).sum() < tol:
            return nxt
        r = nxt
    return r


def rank_order(scores, decimals=10):
    """Indices by descending score; scores equal to `decimals` places keep position order."""
    key = np.round(np.asarray(scores), decimals)
    return sorted(range(len(scores)), key=lambda i: (-key[i], i))


def select_sentences(sentences, scores, budget_fraction):
    total = sum(len(s) for s in sentences)
    budget = math.ceil(budget_fraction * total)
    chosen, used = [], 0
    for i in rank_order(scores):
        if used >= budget:
            break
        chosen.append(i)
        used += len(sentences[i])
    return sorted(chosen)


def textrank(tokens, embedder, budget_fraction=0.4, damping=DAMPING, tol=TOL):
    """Sentence-graph PageRank extract; `embedder` maps a list of token lists to (S, d)."""
    if not 0.0 < budget_fraction <= 1.0:
        raise ValueError("budget_fraction must be in (0, 1]")
    sentences = split_sentences(tokens)
    if len(sentences) <= 1:
        return list(tokens)
    scores = pagerank(similarity_graph(embedder(sentences)), damping, tol)
    return [t for i in select_sentences(sentences, scores, budget_fraction) for t in sentences[i]]


def bag_of_words_embedder(sentences):
    """Count vectors over the sentences' own vocabulary (a dependency-free fallback)."""
    vocab = sorted({t for s in sentences for t in s})
    col = {t: i for i, t in enumerate(vocab)}
    out = np.zeros((len(sentences), len(vocab)))
    for r, s in enumerate(sentences):
        for t in s:
            out[r, col[t]] += 1.0
    return out


def encoder_embedder(model, vocab):
    """Mean-pooled final encoder states of the in-repo encoder, one row per sentence."""
    from ..corpus.vocab import BOS
    from ..substrate import no_grad

    def embed(sentences):
        with no_grad():
            seqs = [[BOS] + vocab.encode(s)[: model.cfg.max_note_len - 1] for s in sentences]
            H, mask = model.encode_batch(seqs)
        w = mask.astype(np.float64)
        return (H.data * w[:, :, None]).sum(axis=1) / w.sum(axis=1, keepdims=True)

    return embed
