"""Finite-difference check of a complete stage-2 step on a micro model."""
from __future__ import annotations

import numpy as np

from ..model import ModelConfig, Seq2SeqModel
from ..responder import QueryResponder, ResponderConfig
from ..substrate import STTape, backward, finite_diff_params, no_grad, rel_error
from .loop import Guidance, NoteItem, TrainConfig, stage2_batch_loss


def micro_setup(seed, d=8, vs=16, query="combined"):
    """A micro summarizer, frozen responder and three notes (histories of 0, 1 and 2 notes)."""
    rng = np.random.default_rng([seed, 41])
    model = Seq2SeqModel(ModelConfig(vs=vs, d=d, n_layers_enc=2, n_layers_dec=2, n_heads=2, ff_dim=2 * d,
                                     max_note_len=12, max_summary_len=6, lambda2=0.3, init_seed=seed))
    resp = QueryResponder(ResponderConfig(vs=vs, d=d, n_layers=1, n_heads=2, ff_dim=2 * d, max_len=32,
                                          init_seed=seed + 1), query)
    resp.freeze()
    ids = lambda n: [int(x) for x in rng.integers(6, vs, n)]  # noqa: E731
    items = [NoteItem(f"m{seed}-{k}", ids(int(rng.integers(5, 10))), ids(4), [ids(6) for _ in range(k)], ids(5))
             for k in range(3)]
    return model, resp, items


def stage2_grad_check(seed, n_coords=1, n_directions=12, eps=1e-5, d=8, vs=16, query="combined",
                      lambda1=0.5):
    """Analytic vs central-difference gradients of the stage-2 loss w.r.t. summarizer parameters.

    The straight-through samples of the analytic pass are replayed during the
    finite differences, so both evaluate the same discrete branch. Checked
    quantities: `n_coords` random entries of every parameter tensor and
    `n_directions` directional derivatives along random unit directions in
    the full parameter space. Returns (relative error over all checked
    quantities, number of checks).
    """
    model, resp, items = micro_setup(seed, d, vs, query)
    cfg = TrainConfig(lambda1=lambda1, lambda2=0.3, seed=seed, query=query)
    guidance = Guidance(resp, query)
    tape = STTape()
    loss, _, _ = stage2_batch_loss(model, guidance, items, cfg, 0, tape)
    store = model.store
    store.zero_grad()
    backward(loss)
    names = store.trainable()
    grads = {n: store[n].grad if store[n].grad is not None else np.zeros_like(store[n].data) for n in names}
    rng = np.random.default_rng([seed, 43])
    coords = []
    for name in names:
        size = store[name].data.size
        coords += [(name, int(k)) for k in np.sort(rng.choice(size, min(n_coords, size), replace=False))]
    analytic = [grads[n].reshape(-1)[k] for n, k in coords]

    def replayed():
        return stage2_batch_loss(model, guidance, items, cfg, 0, tape.replay())[0]

    numeric = list(finite_diff_params(replayed, {n: store[n] for n, _ in coords}, coords, eps))
    base = {n: store[n].data.copy() for n in names}
    with no_grad():
        for _ in range(n_directions):
            v = {n: rng.normal(size=base[n].shape) for n in names}
            norm = np.sqrt(sum((x * x).sum() for x in v.values()))
            analytic.append(sum((grads[n] * v[n]).sum() for n in names) / norm)
            vals = []
            for sign in (1.0, -1.0):
                for n in names:
                    store[n].data[...] = base[n] + sign * eps * v[n] / norm
                vals.append(replayed().item())
            numeric.append((vals[0] - vals[1]) / (2 * eps))
        for n in names:
            store[n].data[...] = base[n]
    return rel_error(analytic, numeric), len(analytic)
