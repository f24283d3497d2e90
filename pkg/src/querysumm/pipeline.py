"""Run configuration and end-to-end orchestration shared by the CLI and the acceptance suite."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .corpus import GeneratorConfig, build_vocabulary, generate_corpus, load_corpus, preprocess_corpus, save_corpus
from .corpus.vocab import EOS
from .eval import (
    PredictivenessConfig, bag_of_words_embedder, build_report, encoder_embedder, lead_k, predictiveness,
    render_table, summary_metrics, textrank, write_json, write_per_doc_csv, write_summaries,
)
from .eval.plots import plot_length_ratios, plot_sweep, plot_training_curve
from .model import ModelConfig, Seq2SeqModel, load_model, save_model
from .responder import (
    ResponderConfig, ResponderTrainConfig, save_responder, targets_for, train_responder,
)
from .substrate import no_grad
from .training import TrainConfig, TrainLog, build_items, stage0_bootstrap, stage1_adapt, stage2_train
from .training.loop import encode_inputs

log = logging.getLogger(__name__)

METHODS = ("qgsumm", "lead40", "textrank")
METHOD_NAMES = {"qgsumm": "QGSumm", "lead40": "Lead-40%", "textrank": "TextRank"}


@dataclass
class EvalConfig:
    split: str = "test"
    query: str = "combined"          # responder used for predictiveness
    lead_fraction: float = 0.4
    textrank_budget: float = 0.4
    summary_mode: str = "greedy"
    methods: list = field(default_factory=lambda: list(METHODS))
    predictiveness: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if self.summary_mode not in ("greedy", "st_gumbel"):
            raise ValueError("summary_mode must be greedy or st_gumbel")
        PredictivenessConfig(**self.predictiveness)


def _model_defaults():
    return {f.name: f.default for f in fields(ModelConfig) if f.name not in ("vs", "lambda2", "init_seed")}


def _responder_defaults():
    return {f.name: f.default for f in fields(ResponderConfig) if f.name not in ("vs", "init_seed")}


@dataclass
class RunConfig:
    """Every knob of a run. The master seed overrides all per-section seeds."""
    seed: int = 0
    corpus: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: dict = field(default_factory=_model_defaults)
    responder: dict = field(default_factory=_responder_defaults)
    responder_train: ResponderTrainConfig = field(default_factory=ResponderTrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        self.corpus.validate()
        for name, allowed in (("model", _model_defaults()), ("responder", _responder_defaults())):
            unknown = set(getattr(self, name)) - set(allowed)
            if unknown:
                raise ValueError(f"unknown {name} fields: {sorted(unknown)}")
        self.responder_train.seed = self.seed
        self.train.seed = self.seed
        self.eval.predictiveness["seed"] = self.seed

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")

        def section(klass, key):
            vals = dict(d.get(key, {}))
            names = {f.name for f in fields(klass)}
            extra = set(vals) - names
            if extra:
                raise ValueError(f"unknown {key} fields: {sorted(extra)}")
            return klass(**vals)

        return cls(seed=int(d.get("seed", 0)), corpus=section(GeneratorConfig, "corpus"),
                   model={**_model_defaults(), **d.get("model", {})},
                   responder={**_responder_defaults(), **d.get("responder", {})},
                   responder_train=section(ResponderTrainConfig, "responder_train"),
                   train=section(TrainConfig, "train"), eval=section(EvalConfig, "eval"))

    def to_dict(self):
        return asdict(self)

    def with_seed(self, seed):
        d = self.to_dict()
        d["seed"] = seed
        return RunConfig.from_dict(d)

    def model_config(self, vs):
        return ModelConfig(vs=vs, lambda2=self.train.lambda2, init_seed=self.seed, **self.model)

    def responder_config(self, vs):
        return ResponderConfig(vs=vs, init_seed=self.seed + 1, **self.responder)

    def predictiveness_config(self):
        return PredictivenessConfig(**self.eval.predictiveness)


# ---------------------------------------------------------------- steps

def make_corpus(cfg):
    return generate_corpus(cfg.corpus, cfg.seed)


def vocabulary(corpus):
    return build_vocabulary(corpus.split("train"))


def items_for(corpus, vocab, split, model_cfg):
    return build_items(corpus.split(split), vocab, model_cfg.max_note_len)


def run_responder(corpus, vocab, cfg, kind):
    return train_responder(corpus.split("train"), vocab, kind, cfg.responder_config(len(vocab)),
                           copy.deepcopy(cfg.responder_train))


def run_stage0(corpus, vocab, cfg, tlog=None):
    model = Seq2SeqModel(cfg.model_config(len(vocab)))
    stage0_bootstrap(model, items_for(corpus, vocab, "train", model.cfg), cfg.train, tlog)
    return model


def run_stage1(model, corpus, vocab, cfg, tlog=None):
    notes = [it.ids for it in items_for(corpus, vocab, "train", model.cfg)]
    return stage1_adapt(model, notes, cfg.train, tlog)


def run_stage2(model, responder, corpus, vocab, cfg, tlog=None, train_cfg=None):
    tc = train_cfg or cfg.train
    items = items_for(corpus, vocab, "train", model.cfg)
    val = items_for(corpus, vocab, "val", model.cfg)
    return stage2_train(model, responder, items, tc, val, tlog)


def summarize(model, corpus, vocab, split, mode="greedy", seed=0, batch_size=16):
    """(note_id, token strings) for every nursing note of `split`."""
    items = items_for(corpus, vocab, split, model.cfg)
    rows = []
    with no_grad():
        for b in range(0, len(items), batch_size):
            batch = items[b : b + batch_size]
            H, mask, P, pmask, tif = encode_inputs(model, batch, history_grad=False)
            rngs = [np.random.default_rng([seed, b, i]) for i in range(len(batch))] if mode == "st_gumbel" else None
            g = model.generate_batch(H, mask, P, pmask, tif, mode, rngs)
            for i, it in enumerate(batch):
                rows.append((it.note_id, vocab.decode([t for t in g.tokens(i) if t != EOS])))
    return rows


def baseline_summaries(corpus, split, method, fraction=0.4, embedder=None):
    rows = []
    for n in corpus.notes(split):
        if method == "lead40":
            rows.append((n.note_id, lead_k(n.tokens, fraction)))
        elif method == "textrank":
            rows.append((n.note_id, textrank(n.tokens, embedder or bag_of_words_embedder, fraction)))
        else:
            raise ValueError(f"unknown baseline {method!r}")
    return rows


def eval_rows(corpus, split, summaries):
    """(note_id, note tokens, summary tokens); every note of the split needs a summary."""
    out = []
    for n in corpus.notes(split):
        if n.note_id not in summaries:
            raise ValueError(f"no summary for note {n.note_id}")
        out.append((n.note_id, n.tokens, list(summaries[n.note_id])))
    return out


def predictiveness_samples(corpus, vocab, split, summaries, max_len):
    label = {a.admission_id: targets_for(a.record) for a in corpus.split(split)}
    return [(n.note_id, vocab.encode(summaries[n.note_id])[: max_len - 1], label[n.admission_id])
            for n in corpus.notes(split)]


def evaluate_method(name, corpus, vocab, split, summaries, responder=None, query="combined", pcfg=None,
                    workers=1):
    metrics = summary_metrics(eval_rows(corpus, split, summaries), corpus.lexicon)
    pred = None
    if responder is not None:
        samples = predictiveness_samples(corpus, vocab, split, summaries, responder.cfg.max_len)
        pred = predictiveness(samples, responder, query, pcfg, workers=workers)
    return build_report(name, metrics, pred)


# ---------------------------------------------------------------- sweep

SWEEP_VALUES = (0.1, 0.3, 0.5, 0.7, 0.9)


def sweep(param, values, model_path, responder, corpus, vocab, cfg, split="val"):
    """Stage-2 runs from the same checkpoint, one per value of lambda1 or lambda2.

    Returns rows {param, length_ratio, recall, fdr} from greedy summaries of `split`.
    """
    if param not in ("lambda1", "lambda2"):
        raise ValueError("sweep parameter must be lambda1 or lambda2")
    rows = []
    for v in values:
        model = load_model(model_path)
        tc = TrainConfig(**{**cfg.train.to_dict(), param: float(v)})
        run_stage2(model, responder, corpus, vocab, cfg, train_cfg=tc)
        summ = dict(summarize(model, corpus, vocab, split))
        agg = summary_metrics(eval_rows(corpus, split, summ), corpus.lexicon)["aggregate"]
        rows.append({param: float(v), "length_ratio": agg["length_ratio"]["mean"],
                     "recall": agg["concept_recall"]["mean"], "fdr": agg["concept_fdr"]["mean"]})
        log.info("sweep %s=%.2f length ratio %.4f recall %.4f", param, v, rows[-1]["length_ratio"],
                 rows[-1]["recall"])
    return rows


def write_sweep(rows, param, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cols = [param, "length_ratio", "recall", "fdr"]
    with open(out / f"sweep_{param}.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[c]) for c in cols) + "\n")
    plot_sweep(rows, param, ["length_ratio", "recall"], out / f"sweep_{param}.png")


# ---------------------------------------------------------------- full pipeline

def run_pipeline(cfg, out, workers=1):
    """corpus -> responder -> stages 0-2 -> summaries -> reports, all under `out`."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    corpus = preprocess_corpus(make_corpus(cfg))
    save_corpus(corpus, out / "corpus")
    vocab = vocabulary(corpus)
    (out / "vocab.json").write_text(vocab.to_json() + "\n", encoding="utf-8")

    responder = run_responder(corpus, vocab, cfg, cfg.eval.query)
    save_responder(out / "responder.json", responder)
    logs = [TrainLog() for _ in range(3)]
    model = run_stage0(corpus, vocab, cfg, logs[0])
    save_model(out / "model_stage0.json", model)
    run_stage1(model, corpus, vocab, cfg, logs[1])
    save_model(out / "model_stage1.json", model)
    guide = responder if cfg.train.query == cfg.eval.query else run_responder(corpus, vocab, cfg, cfg.train.query)
    run_stage2(model, guide, corpus, vocab, cfg, logs[2])
    save_model(out / "model_stage2.json", model)
    for k, tl in enumerate(logs):
        tl.write(out / f"trainlog_stage{k}.jsonl", out / f"epochs_stage{k}.json")

    split, ev = cfg.eval.split, cfg.eval
    summaries = {}
    for m in ev.methods:
        if m == "qgsumm":
            rows = summarize(model, corpus, vocab, split, ev.summary_mode, cfg.seed)
        elif m == "textrank":
            rows = baseline_summaries(corpus, split, m, ev.textrank_budget, encoder_embedder(model, vocab))
        else:
            rows = baseline_summaries(corpus, split, m, ev.lead_fraction)
        write_summaries(out / "summaries" / f"{m}.jsonl", rows)
        summaries[m] = dict(rows)

    rep_dir = out / "reports"
    reports = []
    for m in ev.methods:
        rep = evaluate_method(METHOD_NAMES[m], corpus, vocab, split, summaries[m], responder, ev.query,
                              cfg.predictiveness_config(), workers)
        write_per_doc_csv(rep_dir / f"per_doc_{m}.csv", rep["metrics"]["per_document"])
        reports.append(rep)
    stage2 = [e for e in logs[2].epochs]
    report = {"methods": reports, "stage2_epochs": stage2, "split": split, "seed": cfg.seed}
    write_json(rep_dir / "report.json", report)
    (rep_dir / "table.txt").write_text(render_table(reports), encoding="utf-8")
    plot_length_ratios({r["method"]: [d["length_ratio"] for d in r["metrics"]["per_document"]] for r in reports},
                       rep_dir / "length_ratios.png")
    if logs[2].steps:
        plot_training_curve(logs[2].steps, rep_dir / "stage2_loss.png")
    return report


def load_inputs(corpus_dir):
    corpus = load_corpus(corpus_dir)
    return corpus, vocabulary(corpus)

