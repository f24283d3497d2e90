"""JSON checkpoints: parameter name -> shape + flat float64 values, plus config."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..substrate import ParamStore

FORMAT = "querysumm-checkpoint-1"


def dump_store(store):
    return {name: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist(), "frozen": store.is_frozen(name)}
            for name, t in store.items()}


def load_store(params, expected=None):
    """Rebuild a ParamStore; `expected` (a store) pins names and shapes."""
    store = ParamStore()
    for name, rec in params.items():
        arr = np.asarray(rec["values"], dtype=np.float64)
        shape = tuple(rec["shape"])
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"checkpoint parameter {name!r}: {arr.size} values for shape {shape}")
        store.add(name, arr.reshape(shape))
        if rec.get("frozen"):
            store.freeze([name])
    if expected is not None:
        if set(expected.names()) != set(store.names()):
            missing = sorted(set(expected.names()) - set(store.names()))
            extra = sorted(set(store.names()) - set(expected.names()))
            raise ValueError(f"checkpoint parameters do not match the config: missing {missing}, extra {extra}")
        for name, t in expected.items():
            if store[name].shape != t.shape:
                raise ValueError(f"checkpoint parameter {name!r} has shape {store[name].shape}, expected {t.shape}")
    return store


def save_checkpoint(path, store, config, kind, extra=None):
    doc = {"format": FORMAT, "kind": kind, "config": config, "extra": extra or {}, "params": dump_store(store)}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def read_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a checkpoint of format {FORMAT}")
    return doc


def save_model(path, model, extra=None):
    save_checkpoint(path, model.store, model.cfg.to_dict(), "seq2seq", extra)


def load_model(path):
    from .seq2seq import ModelConfig, Seq2SeqModel
    doc = read_checkpoint(path)
    if doc["kind"] != "seq2seq":
        raise ValueError(f"{path}: expected a seq2seq checkpoint, got {doc['kind']!r}")
    cfg = ModelConfig(**doc["config"])
    # a fresh model pins the expected names and shapes
    ref = Seq2SeqModel(cfg)
    return Seq2SeqModel(cfg, load_store(doc["params"], ref.store))
