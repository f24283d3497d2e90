"""Transformer building blocks over a ParamStore.

Parameters live in the store under dotted names; each block is a plain
function taking the store, a name prefix and tensors. Batched tensors are
(B, T, d); key masks are bool (B, Tk) with True marking real positions.
"""
from __future__ import annotations

import math

import numpy as np

from ..substrate import ops


def init_linear(store, name, d_in, d_out, rng, gain=1.0):
    store.add(f"{name}.w", rng.normal(0.0, gain / math.sqrt(d_in), size=(d_in, d_out)))
    store.add(f"{name}.b", np.zeros(d_out))


def init_ln(store, name, d):
    store.add(f"{name}.g", np.ones(d))
    store.add(f"{name}.b", np.zeros(d))


def init_attention(store, name, d, rng):
    for part in ("q", "k", "v"):
        init_linear(store, f"{name}.{part}", d, d, rng)
    init_linear(store, f"{name}.o", d, d, rng, gain=0.5)


def init_ffn(store, name, d, ff, rng):
    init_linear(store, f"{name}.fc1", d, ff, rng)
    init_linear(store, f"{name}.fc2", ff, d, rng, gain=0.5)


def linear(store, name, x):
    return ops.add(ops.matmul(x, store[f"{name}.w"]), store[f"{name}.b"])


def ln(store, name, x):
    return ops.layer_norm(x, store[f"{name}.g"], store[f"{name}.b"])


def ffn(store, name, x):
    return linear(store, f"{name}.fc2", ops.gelu(linear(store, f"{name}.fc1", x)))


def split_heads(x, n_heads):
    B, T, d = x.shape
    return ops.transpose(ops.reshape(x, (B, T, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x):
    B, h, T, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (B, T, h * dh))


def project_kv(store, name, mem, n_heads):
    """Per-head keys and values of a memory (B, Tk, d)."""
    return split_heads(linear(store, f"{name}.k", mem), n_heads), split_heads(linear(store, f"{name}.v", mem), n_heads)


def attend(store, name, x, k, v, n_heads, mask):
    """Multi-head attention of queries from x over precomputed per-head k, v.

    `mask` is bool broadcastable to (B, h, Tq, Tk).
    """
    q = split_heads(linear(store, f"{name}.q", x), n_heads)
    dh = q.shape[-1]
    scores = ops.scale(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh))
    att = ops.softmax(scores, axis=-1, mask=mask)
    return linear(store, f"{name}.o", merge_heads(ops.matmul(att, v)))


def key_mask(mask):
    """(B, Tk) key mask as (B, 1, 1, Tk)."""
    return np.asarray(mask, dtype=bool)[:, None, None, :]


def causal_mask(T):
    return np.tril(np.ones((T, T), dtype=bool))[None, None]


def init_encoder(store, prefix, n_layers, d, ff, n_pos, rng):
    store.add(f"{prefix}.pos", rng.normal(0.0, 0.02, size=(n_pos, d)))
    for i in range(n_layers):
        p = f"{prefix}.l{i}"
        init_ln(store, f"{p}.ln1", d)
        init_attention(store, f"{p}.attn", d, rng)
        init_ln(store, f"{p}.ln2", d)
        init_ffn(store, f"{p}.ff", d, ff, rng)
    init_ln(store, f"{prefix}.ln_f", d)


def encoder_stack(store, prefix, x, mask, n_layers, n_heads):
    """Pre-LN encoder over token embeddings x (B, T, d) with key mask (B, T)."""
    T = x.shape[1]
    if T > store[f"{prefix}.pos"].shape[0]:
        raise ValueError(f"sequence of {T} positions exceeds the encoder limit {store[f'{prefix}.pos'].shape[0]}")
    x = ops.add(x, ops.getitem(store[f"{prefix}.pos"], slice(0, T)))
    km = key_mask(mask)
    for i in range(n_layers):
        p = f"{prefix}.l{i}"
        h = ln(store, f"{p}.ln1", x)
        k, v = project_kv(store, f"{p}.attn", h, n_heads)
        x = ops.add(x, attend(store, f"{p}.attn", h, k, v, n_heads, km))
        x = ops.add(x, ffn(store, f"{p}.ff", ln(store, f"{p}.ln2", x)))
    return ln(store, f"{prefix}.ln_f", x)


def pad_ids(seqs, pad=0):
    """Right-pad id lists into (B, T) ids plus a bool mask."""
    T = max(len(s) for s in seqs)
    ids = np.full((len(seqs), T), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask
