"""Summary predictiveness: k-fold fine-tuning of a method's own responder."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.metrics import f1_score

from ..responder import ResponderTrainConfig, fit_kind, predict, unfrozen_copy

SUPPORTED = ("readmission", "phenotype", "combined")


@dataclass
class PredictivenessConfig:
    folds: int = 10
    epochs: int = 2
    lr: float = 1e-3
    batch_size: int = 16
    threshold: float = 0.5
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def fold_assignment(ids, folds, seed):
    """id -> fold; a seeded shuffle of the sorted ids dealt round-robin, so input order is irrelevant."""
    uniq = sorted(set(ids))
    if len(uniq) != len(list(ids)):
        raise ValueError("sample ids must be unique")
    perm = np.random.default_rng(seed).permutation(len(uniq))
    return {uniq[p]: k % folds for k, p in enumerate(perm)}


def readmission_scores(y, pred):
    """(weighted F1, positive-class F1); class 0 is 'readmitted'."""
    return (float(f1_score(y, pred, average="weighted", zero_division=0)),
            float(f1_score(y, pred, pos_label=0, average="binary", zero_division=0)))


def phenotype_macro_f1(Y, P):
    return float(f1_score(Y, P, average="macro", zero_division=0))


def chance_macro_f1(Y, P):
    """Expected macro F1 when predictions are independent of labels: mean of 2pq / (p + q)."""
    p = np.asarray(Y, dtype=np.float64).mean(axis=0)
    q = np.asarray(P, dtype=np.float64).mean(axis=0)
    denom = p + q
    return float(np.mean(np.where(denom > 0, 2 * p * q / np.where(denom > 0, denom, 1.0), 0.0)))


def _run_fold(args):
    base, train, test, cfg, k = args
    resp = unfrozen_copy(base)
    hyper = ResponderTrainConfig(epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed * 1000 + k)
    fit_kind(resp, train, hyper)
    out = predict(resp, [s[1] for s in test])
    res = {}
    if "re" in out:
        y = np.array([s[2]["re"] for s in test])
        res["weighted_f1"], res["positive_f1"] = readmission_scores(y, out["re"].argmax(axis=1))
    if "ph" in out:
        Y = np.stack([s[2]["ph"] for s in test]).astype(int)
        P = (out["ph"] > cfg.threshold).astype(int)
        res["macro_f1"] = phenotype_macro_f1(Y, P)
        res["chance_macro_f1"] = chance_macro_f1(Y, P)
    return res


def predictiveness(samples, responder, query, cfg=None, workers=1):
    """`samples`: (id, token ids, {"re": int, "ph": 25-vector}) per test note.

    For each fold, a copy of `responder` is fine-tuned on the other folds'
    summaries and scored on the held-out fold. Folds are independent, so
    `workers` > 1 runs them in separate processes with identical results.
    """
    cfg = cfg or PredictivenessConfig()
    if query not in SUPPORTED:
        raise ValueError(f"predictiveness supports {SUPPORTED}, not {query!r}")
    if len(samples) < cfg.folds:
        raise ValueError(f"{len(samples)} samples is fewer than {cfg.folds} folds")
    samples = sorted(samples, key=lambda s: s[0])
    assign = fold_assignment([s[0] for s in samples], cfg.folds, cfg.seed)
    fold_of = np.array([assign[s[0]] for s in samples])
    base = responder.as_kind(query) if responder.kind != query else responder
    jobs = [(base, [(samples[i][1], samples[i][2]) for i in np.flatnonzero(fold_of != k)],
             [samples[i] for i in np.flatnonzero(fold_of == k)], cfg, k) for k in range(cfg.folds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    per_fold = {k: [r[k] for r in results] for k in ("weighted_f1", "positive_f1", "macro_f1", "chance_macro_f1")
                if k in results[0]}
    block = {"folds": cfg.folds, "per_fold": per_fold,
             "fold_sizes": [int((fold_of == k).sum()) for k in range(cfg.folds)]}
    for k, v in per_fold.items():
        block[k] = float(np.mean(v))
        block[f"{k}_std_per_fold"] = float(np.std(v))
    return block
