"""Bootstrap, encoder adaptation and query-guided self-supervised training."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..corpus.records import metadata_to_text
from ..corpus.vocab import BOS, EOS
from ..substrate import AdamState, NonFiniteError, Tensor, adam_step, backward, no_grad, ops

log = logging.getLogger(__name__)

CE_DIRECTIONS = ("forward", "reverse", "js")


@dataclass
class TrainConfig:
    lambda1: float = 0.5
    lambda2: float = 0.3
    lr: float = 2e-5
    lr_stage0: float = 1e-3
    lr_stage1: float = 1e-3
    batch_size: int = 8
    epochs_stage0: int = 4
    epochs_stage1: int = 1
    epochs_stage2: int = 3
    stage0_notes: int | None = None
    stage0_recon: int = 1              # notes per stage-0 batch also reconstructed in full
    stage2_notes: int | None = 480
    val_notes: int = 48
    max_summary_len: int | None = None
    lead_fraction: float = 0.4
    query: str = "combined"
    ce_direction: str = "forward"
    length_grad: bool = True
    clip: float = 1.0
    seed: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.stage0_recon < 0:
            raise ValueError("stage0_recon must be >= 0")
        if self.ce_direction not in CE_DIRECTIONS:
            raise ValueError(f"ce_direction must be one of {CE_DIRECTIONS}")
        if not 0.0 < self.lead_fraction <= 1.0:
            raise ValueError("lead_fraction must be in (0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainLog:
    """Append-only per-step records plus per-epoch summaries."""
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def step(self, **rec):
        rec["step"] = len(self.steps)
        self.steps.append(rec)
        return rec

    def epoch(self, **rec):
        self.epochs.append(rec)
        return rec

    def losses(self):
        return [s["loss"] for s in self.steps]

    def write(self, steps_path, epochs_path=None):
        Path(steps_path).parent.mkdir(parents=True, exist_ok=True)
        with open(steps_path, "w", encoding="utf-8", newline="\n") as fh:
            for s in self.steps:
                fh.write(json.dumps(s, sort_keys=True) + "\n")
        if epochs_path is not None:
            with open(epochs_path, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(self.epochs, fh, sort_keys=True, indent=1)
                fh.write("\n")


# ---------------------------------------------------------------- data items

@dataclass
class NoteItem:
    """Everything stage 2 may see about one note: no labels."""
    note_id: str
    ids: list
    meta_ids: list
    history: list      # id lists of earlier notes, oldest first
    next_ids: list | None = None


def build_items(admissions, vocab, max_note_len):
    cap = max_note_len - 1
    items = []
    for adm in admissions:
        notes = adm.nursing_notes
        meta = vocab.tokenize(metadata_to_text(adm.record))[:cap]
        ids = [vocab.tokenize(n.text)[:cap] for n in notes]
        ds = adm.discharge_summary
        ds_ids = vocab.tokenize(ds.text)[:cap] if ds is not None else None
        for j, n in enumerate(notes):
            nxt = ids[j + 1] if j + 1 < len(notes) else ds_ids
            items.append(NoteItem(n.note_id, ids[j], meta, ids[:j], nxt))
    return items


def lead_ids(ids, fraction):
    return list(ids[: math.ceil(fraction * len(ids))])


def subset(items, n, seed, salt):
    if n is None or n >= len(items):
        return list(items)
    rng = np.random.default_rng([seed, salt])
    idx = np.sort(rng.choice(len(items), n, replace=False))
    return [items[i] for i in idx]


# ---------------------------------------------------------------- model inputs

def encode_inputs(model, batch, history_grad):
    """Encoder states, metadata states and [TI] vectors for a batch of items."""
    H, mask = model.encode_batch([[BOS] + it.ids for it in batch])
    P, pmask = model.encode_batch([[BOS] + it.meta_ids for it in batch])
    hist_seqs = [[BOS] + h for it in batch for h in it.history]
    if hist_seqs:
        if history_grad:
            Hh, _ = model.encode_batch(hist_seqs)
        else:
            with no_grad():
                Hh, _ = model.encode_batch(hist_seqs)
        first = ops.getitem(Hh, (slice(None), 0))
    hists, k = [], 0
    for it in batch:
        hists.append([ops.getitem(first, k + j) for j in range(len(it.history))])
        k += len(it.history)
    return H, mask, P, pmask, model.tif_batch(hists)


def _batches(items, size, rng):
    order = rng.permutation(len(items))
    return [[items[i] for i in order[b : b + size]] for b in range(0, len(order), size)]


def _check_grads(store, where):
    for name, t in store.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            raise NonFiniteError(f"{where}: non-finite gradient in {name}")


def _step(store, state, loss, clip, where):
    backward(loss)
    _check_grads(store, where)
    # parameters outside this batch's graph get an explicit zero gradient
    for name in store.trainable():
        if store[name].grad is None:
            store[name].grad = np.zeros_like(store[name].data)
    norm = store.grad_norm()
    if clip:
        store.clip_grad_norm(clip)
    adam_step(store, state)
    return norm


# ---------------------------------------------------------------- stage 0

def stage0_bootstrap(model, items, cfg, tlog=None):
    """Supervised (note -> Lead-k extract) training; gives the decoder a summarization prior.

    The first `cfg.stage0_recon` notes of each batch are also reconstructed in
    full, in the stage-1 input format (no history, no metadata), so the
    bootstrap works like denoising pretraining and every decoder position up
    to the note length is trained.
    """
    tlog = tlog if tlog is not None else TrainLog()
    model.cfg.lambda2 = cfg.lambda2
    L = model.cfg.max_summary_len if cfg.max_summary_len is None else cfg.max_summary_len
    data = subset(items, cfg.stage0_notes, cfg.seed, 0)
    rng = np.random.default_rng([cfg.seed, 100])
    state = AdamState(lr=cfg.lr_stage0)
    for epoch in range(cfg.epochs_stage0):
        correct = total = 0
        for batch in _batches(data, cfg.batch_size, rng):
            t0 = time.time()
            H, mask, P, pmask, tif = encode_inputs(model, batch, history_grad=False)
            targets = [lead_ids(it.ids, cfg.lead_fraction)[:L] for it in batch]
            loss, c, n = model.teacher_forced(H, mask, P, pmask, tif, targets)
            correct += c
            total += n
            if cfg.stage0_recon:
                recon, _, _ = model.reconstruct_forward([it.ids for it in batch[: cfg.stage0_recon]])
                loss = ops.add(loss, recon)
            norm = _step(model.store, state, loss, cfg.clip, "stage0")
            rec = dict(stage=0, epoch=epoch, loss=loss.item(), accuracy=c / n, grad_norm=norm)
            if cfg.record_wall_time:
                rec["wall_time"] = time.time() - t0
            tlog.step(**rec)
        tlog.epoch(stage=0, epoch=epoch, accuracy=correct / max(total, 1))
        log.info("stage0 epoch %d token accuracy %.4f", epoch, correct / max(total, 1))
    return model


def bootstrap_accuracy(model, items, cfg):
    L = model.cfg.max_summary_len if cfg.max_summary_len is None else cfg.max_summary_len
    correct = total = 0
    with no_grad():
        for b in range(0, len(items), 16):
            batch = items[b : b + 16]
            H, mask, P, pmask, tif = encode_inputs(model, batch, history_grad=False)
            _, c, n = model.teacher_forced(H, mask, P, pmask, tif,
                                           [lead_ids(it.ids, cfg.lead_fraction)[:L] for it in batch])
            correct += c
            total += n
    return correct / max(total, 1)


# ---------------------------------------------------------------- stage 1

def stage1_names(model):
    """Encoder-side parameters adapted by reconstruction (the shared token table stays fixed)."""
    return model.encoder_names()


def stage1_adapt(model, notes, cfg, tlog=None, epochs=None, target_accuracy=None):
    """Encoder adaptation by reconstructing each note with the decoder frozen.

    With `target_accuracy`, stops after the first epoch after which the
    teacher-forced reconstruction accuracy on `notes` reaches it.
    """
    tlog = tlog if tlog is not None else TrainLog()
    store = model.store
    keep = [n for n in store.names() if n not in stage1_names(model)]
    was_frozen = {n for n in keep if store.is_frozen(n)}
    store.freeze(keep)
    rng = np.random.default_rng([cfg.seed, 200])
    state = AdamState(lr=cfg.lr_stage1)
    epochs = cfg.epochs_stage1 if epochs is None else epochs
    try:
        for epoch in range(epochs):
            correct = total = 0
            for batch in _batches(notes, cfg.batch_size, rng):
                t0 = time.time()
                loss, c, n = model.reconstruct_forward(batch)
                correct += c
                total += n
                norm = _step(store, state, loss, cfg.clip, "stage1")
                rec = dict(stage=1, epoch=epoch, loss=loss.item(), accuracy=c / n, grad_norm=norm)
                if cfg.record_wall_time:
                    rec["wall_time"] = time.time() - t0
                tlog.step(**rec)
            tlog.epoch(stage=1, epoch=epoch, accuracy=correct / max(total, 1))
            log.info("stage1 epoch %d reconstruction accuracy %.4f", epoch, correct / max(total, 1))
            if target_accuracy is not None and reconstruction_stats(model, notes)[1] >= target_accuracy:
                break
    finally:
        store.unfreeze([n for n in keep if n not in was_frozen])
    return model


def reconstruction_stats(model, notes, batch_size=16):
    """(mean token CE, token accuracy) of teacher-forced reconstruction."""
    loss_sum = correct = total = 0
    with no_grad():
        for b in range(0, len(notes), batch_size):
            loss, c, n = model.reconstruct_forward(notes[b : b + batch_size])
            loss_sum += loss.item() * n
            correct += c
            total += n
    return loss_sum / total, correct / total


# ---------------------------------------------------------------- stage 2

def length_penalty(alpha, lambda1):
    """Multiplier 1 + lambda1 * exp(alpha - 0.5)."""
    return 1.0 + lambda1 * math.exp(alpha - 0.5)


def soft_lengths(gen):
    """Differentiable content lengths: sum over steps of prod_{s<=t} (1 - eos_s).

    The forward value is the exact count of tokens before the first [EOS].
    """
    alive = None
    total = None
    for y in gen.onehots:
        keep = ops.sub(1.0, ops.getitem(y, (slice(None), EOS)))
        alive = keep if alive is None else ops.mul(alive, keep)
        total = alive if total is None else ops.add(total, alive)
    return total


def summary_segments(gen):
    """Per-sample one-hot rows of the content tokens (before [EOS])."""
    segs = []
    for i in range(len(gen.lengths)):
        n = int(gen.lengths[i])
        segs.append(ops.stack([ops.getitem(gen.onehots[t], i) for t in range(n)], axis=0))
    return segs


def divergence(target, pred, direction):
    """Per-sample CE between answer distributions (rows)."""
    if direction == "forward":
        return ops.cross_entropy_soft(target, pred)
    if direction == "reverse":
        return ops.cross_entropy_soft(pred, target)
    m = ops.scale(ops.add(target, pred), 0.5)
    kl_t = ops.sub(ops.cross_entropy_soft(target, m), ops.cross_entropy_soft(target, target))
    kl_p = ops.sub(ops.cross_entropy_soft(pred, m), ops.cross_entropy_soft(pred, pred))
    return ops.scale(ops.add(kl_t, kl_p), 0.5)


def summ_loss(targets, preds, len_s, len_n, lambda1, query="combined", direction="forward"):
    """Query-agreement loss scaled by the batch length penalty.

    `targets`, `preds`: (K, c) responder outputs for notes and summaries
    (targets detached). `len_s`: (K,) summary lengths, a Tensor when lengths
    carry gradient. `len_n`: (K,) note lengths. Returns (loss, info).
    """
    K = targets.shape[0]
    if K == 0:
        raise ValueError("summ_loss: empty batch")
    targets = Tensor(targets.data) if isinstance(targets, Tensor) else Tensor(targets)
    if query == "similarity":
        per = ops.sub(1.0, ops.cosine_similarity(targets, preds))
    else:
        per = divergence(targets, preds, direction)
    ce = ops.mean(per)
    len_s = len_s if isinstance(len_s, Tensor) else Tensor(np.asarray(len_s, dtype=np.float64))
    alpha = ops.scale(ops.sum(len_s), 1.0 / float(np.sum(len_n)))
    mult = ops.add(ops.scale(ops.exp(ops.sub(alpha, 0.5)), lambda1), 1.0)
    loss = ops.mul(ce, mult)
    return loss, {"ce": ce.item(), "alpha": alpha.item(), "multiplier": mult.item()}


class Guidance:
    """Frozen-responder targets and predictions for one query kind."""

    def __init__(self, responder, query):
        if not responder.frozen:
            raise ValueError("the query responder must be frozen before stage 2")
        if query == "nextnote":
            self.r = responder if responder.kind == "nextnote" else responder.as_kind("nextnote")
        else:
            self.r = responder.as_kind(query) if responder.kind != query else responder
        self.query = query

    def targets(self, batch):
        with no_grad():
            if self.query == "nextnote":
                return self.r.respond_pairs([(it.ids, it.next_ids) for it in batch])
            return self.r.respond_batch([it.ids for it in batch])

    def predictions(self, batch, segs):
        if self.query == "nextnote":
            return self.r.respond_pairs([(s, it.next_ids) for s, it in zip(segs, batch)])
        return self.r.respond_segments([[s] for s in segs])

    def predictions_ids(self, batch, summaries):
        with no_grad():
            if self.query == "nextnote":
                return self.r.respond_pairs([(s, it.next_ids) for s, it in zip(summaries, batch)])
            return self.r.respond_batch(summaries)


def usable_items(items, query):
    if query == "nextnote":
        return [it for it in items if it.next_ids is not None]
    return list(items)


def greedy_summaries(model, items, batch_size=16):
    out = []
    with no_grad():
        for b in range(0, len(items), batch_size):
            batch = items[b : b + batch_size]
            H, mask, P, pmask, tif = encode_inputs(model, batch, history_grad=False)
            g = model.generate_batch(H, mask, P, pmask, tif, "greedy")
            out += [[t for t in g.tokens(i) if t != EOS] for i in range(len(batch))]
    return out


def validation_ce(model, guidance, items, direction="forward"):
    """Mean CE(R(N), R(S)) over items with greedy summaries S (plus mean length ratio)."""
    summaries = greedy_summaries(model, items)
    tg, pr = [], []
    for b in range(0, len(items), 16):
        batch = items[b : b + 16]
        tg.append(guidance.targets(batch).data)
        pr.append(guidance.predictions_ids(batch, [s if s else [EOS] for s in summaries[b : b + 16]]).data)
    tg, pr = np.concatenate(tg), np.concatenate(pr)
    with no_grad():
        if guidance.query == "similarity":
            per = 1.0 - ops.cosine_similarity(Tensor(tg), Tensor(pr)).data
        else:
            per = divergence(Tensor(tg), Tensor(pr), direction).data
    ratio = np.mean([len(s) / len(it.ids) for s, it in zip(summaries, items)])
    return float(per.mean()), float(ratio)


def stage2_batch_loss(model, guidance, batch, cfg, step, tape=None):
    """Generate straight-through summaries for `batch` and score them. Returns (loss, info, generation).

    Sample i of step `step` draws its noise from default_rng([seed, step, i]);
    with a replaying `tape` the recorded draws are reused instead.
    """
    L = model.cfg.max_summary_len if cfg.max_summary_len is None else cfg.max_summary_len
    H, mask, P, pmask, tif = encode_inputs(model, batch, history_grad=True)
    rngs = [np.random.default_rng([cfg.seed, step, i]) for i in range(len(batch))]
    gen = model.generate_batch(H, mask, P, pmask, tif, "st_gumbel", rngs, max_len=L, tape=tape)
    target = guidance.targets(batch)
    pred = guidance.predictions(batch, summary_segments(gen))
    len_s = soft_lengths(gen) if cfg.length_grad else gen.lengths.astype(np.float64)
    len_n = np.array([len(it.ids) for it in batch], dtype=np.float64)
    loss, info = summ_loss(target, pred, len_s, len_n, cfg.lambda1, cfg.query, cfg.ce_direction)
    return loss, info, gen


def stage2_train(model, responder, items, cfg, val_items=None, tlog=None):
    """Self-supervised training against the frozen responder's answers."""
    guidance = Guidance(responder, cfg.query)
    tlog = tlog if tlog is not None else TrainLog()
    model.cfg.lambda2 = cfg.lambda2
    r_sum = responder.store.checksum()
    items = usable_items(items, cfg.query)
    val_items = usable_items(val_items or [], cfg.query)[: cfg.val_notes]
    state = AdamState(lr=cfg.lr)
    if val_items:
        ce0, ratio0 = validation_ce(model, guidance, val_items, cfg.ce_direction)
        tlog.epoch(stage=2, epoch=-1, val_ce=ce0, val_length_ratio=ratio0)
        log.info("stage2 init val CE %.4f length ratio %.3f", ce0, ratio0)
    step = 0
    for epoch in range(cfg.epochs_stage2):
        data = subset(items, cfg.stage2_notes, cfg.seed, 1000 + epoch)
        rng = np.random.default_rng([cfg.seed, 300, epoch])
        for batch in _batches(data, cfg.batch_size, rng):
            t0 = time.time()
            loss, info, gen = stage2_batch_loss(model, guidance, batch, cfg, step)
            norm = _step(model.store, state, loss, cfg.clip, "stage2")
            rec = dict(stage=2, epoch=epoch, loss=loss.item(), grad_norm=norm,
                       mean_length=float(gen.lengths.mean()), **info)
            if cfg.record_wall_time:
                rec["wall_time"] = time.time() - t0
            tlog.step(**rec)
            step += 1
        summary = dict(stage=2, epoch=epoch, train_loss=float(np.mean([s["loss"] for s in tlog.steps
                                                                         if s.get("stage") == 2 and s["epoch"] == epoch])))
        if val_items:
            ce, ratio = validation_ce(model, guidance, val_items, cfg.ce_direction)
            summary.update(val_ce=ce, val_length_ratio=ratio)
            log.info("stage2 epoch %d val CE %.4f length ratio %.3f", epoch, ce, ratio)
        tlog.epoch(**summary)
    if responder.store.checksum() != r_sum:
        raise RuntimeError("responder parameters changed during stage 2")
    return model
