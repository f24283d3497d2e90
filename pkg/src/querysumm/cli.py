"""Command-line entry point: `querysumm <subcommand> [flags]`.

Exit codes: 0 success, 1 validation failure (structured JSON error on
stderr), 2 usage error or missing input.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline as P
from .corpus import preprocess_corpus, save_corpus
from .eval import (
    ManualScoreSheet, build_report, encoder_embedder, manual_agg, read_summaries, render_table, write_json,
    write_per_doc_csv, write_summaries,
)
from .eval.plots import plot_length_ratios
from .model import load_model, save_model
from .responder import KINDS, load_responder, save_responder
from .training import TrainConfig, TrainLog, stage2_grad_check

log = logging.getLogger("querysumm")

RESPONDER_KINDS = ("readmission", "phenotype", "combined", "nextnote")
LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parser

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="run directory (default runs/<subcommand>)")
    common.add_argument("--workers", type=int, default=1, help="parallel workers where supported")

    p = argparse.ArgumentParser(prog="querysumm", description="Query-guided self-supervised note summarization.")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_)

    add("corpus-generate", "generate a synthetic corpus")
    s = add("corpus-preprocess", "filter notes and expand abbreviations")
    s.add_argument("--corpus", required=True)
    s = add("train-responder", "train a query responder")
    s.add_argument("--corpus", required=True)
    s.add_argument("--query", required=True, choices=RESPONDER_KINDS)
    s = add("train-stage0", "bootstrap the summarizer on Lead-k extracts")
    s.add_argument("--corpus", required=True)
    s = add("train-stage1", "adapt the encoder by note reconstruction")
    s.add_argument("--corpus", required=True)
    s.add_argument("--model", required=True)
    s = add("train-stage2", "query-guided self-supervised training")
    s.add_argument("--corpus", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--responder", required=True)
    s.add_argument("--query", required=True, choices=KINDS)
    s = add("summarize", "summarize the notes of a split")
    s.add_argument("--corpus", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--split", default=None)
    s.add_argument("--mode", choices=("greedy", "st_gumbel"), default="greedy")
    s = add("eval-metrics", "concept recall, FDR and length of summaries")
    s.add_argument("--corpus", required=True)
    s.add_argument("--summaries", required=True)
    s.add_argument("--split", default=None)
    s.add_argument("--method", default="summaries")
    s = add("eval-predictiveness", "k-fold predictiveness of summaries")
    s.add_argument("--corpus", required=True)
    s.add_argument("--summaries", required=True)
    s.add_argument("--responder", required=True)
    s.add_argument("--query", choices=("readmission", "phenotype", "combined"), default=None)
    s.add_argument("--split", default=None)
    s.add_argument("--method", default="summaries")
    s = add("eval-manual", "aggregate manual 1-5 scores with a two-tailed sign test")
    s.add_argument("--scores", required=True, help="CSV: note_id,method,informativeness,fluency,consistency,relevance")
    s.add_argument("--a", required=True, help="method A")
    s.add_argument("--b", required=True, help="method B")
    s = add("baselines", "extractive baseline summaries")
    s.add_argument("method", choices=("lead40", "textrank"))
    s.add_argument("--corpus", required=True)
    s.add_argument("--split", default=None)
    s.add_argument("--model", default=None, help="encoder for TextRank sentence vectors (bag of words if absent)")
    s = add("check-grads", "finite-difference check of a full stage-2 step on a micro model")
    s.add_argument("--seeds", type=int, default=5)
    s = add("sweep", "stage-2 runs over lambda1 or lambda2")
    s.add_argument("param", choices=("lambda1", "lambda2"))
    s.add_argument("--corpus", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--responder", required=True)
    s.add_argument("--values", default=",".join(str(v) for v in P.SWEEP_VALUES))
    s.add_argument("--split", default="val")
    add("pipeline", "corpus -> responder -> stages 0-2 -> summaries -> reports")
    return p


# ---------------------------------------------------------------- helpers

INPUT_ARGS = ("corpus", "model", "responder", "summaries", "scores", "config")


def _check_inputs(args):
    for name in INPUT_ARGS:
        path = getattr(args, name, None)
        if path is not None and not Path(path).exists():
            raise UsageError(f"--{name}: no such file or directory: {path}")


def _run_config(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            d = json.load(fh)
    else:
        d = {}
    if args.seed is not None:
        d["seed"] = args.seed
    return P.RunConfig.from_dict(d)


def _setup_logging(out):
    level = os.environ.get("QGS_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise ValueError(f"QGS_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    root = logging.getLogger("querysumm")
    for h in list(root.handlers):
        root.removeHandler(h)
    root.setLevel(LOG_LEVELS[level])
    root.propagate = False
    fmt = logging.Formatter("%(levelname)s %(name)s %(message)s")
    for h in (logging.StreamHandler(sys.stderr), logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")):
        h.setFormatter(fmt)
        root.addHandler(h)


def _close_logging():
    root = logging.getLogger("querysumm")
    for h in list(root.handlers):
        h.close()
        root.removeHandler(h)


def _record(out, args, cfg):
    args_d = {k: v for k, v in sorted(vars(args).items()) if k not in ("out",)}
    write_json(out / "config.json", {"command": args.command, "args": args_d, "run_config": cfg.to_dict()})


def _write_log(out, tlog):
    tlog.write(out / "trainlog.jsonl", out / "epochs.json")


def _split(args, cfg):
    return args.split or cfg.eval.split


# ---------------------------------------------------------------- commands

def cmd_corpus_generate(args, cfg, out):
    corpus = P.make_corpus(cfg)
    save_corpus(corpus, out / "corpus")
    print(json.dumps({k: len(v) for k, v in corpus.splits.items()}, sort_keys=True))


def cmd_corpus_preprocess(args, cfg, out):
    corpus = preprocess_corpus(P.load_corpus(args.corpus))
    save_corpus(corpus, out / "corpus")
    (out / "vocab.json").write_text(P.vocabulary(corpus).to_json() + "\n", encoding="utf-8")
    print(json.dumps({k: len(v) for k, v in corpus.splits.items()}, sort_keys=True))


def cmd_train_responder(args, cfg, out):
    corpus, vocab = P.load_inputs(args.corpus)
    resp = P.run_responder(corpus, vocab, cfg, args.query)
    save_responder(out / "responder.json", resp)


def cmd_train_stage0(args, cfg, out):
    corpus, vocab = P.load_inputs(args.corpus)
    tlog = TrainLog()
    model = P.run_stage0(corpus, vocab, cfg, tlog)
    save_model(out / "model.json", model)
    _write_log(out, tlog)


def cmd_train_stage1(args, cfg, out):
    corpus, vocab = P.load_inputs(args.corpus)
    model = load_model(args.model)
    tlog = TrainLog()
    P.run_stage1(model, corpus, vocab, cfg, tlog)
    save_model(out / "model.json", model)
    _write_log(out, tlog)


def cmd_train_stage2(args, cfg, out):
    corpus, vocab = P.load_inputs(args.corpus)
    model = load_model(args.model)
    resp = load_responder(args.responder)
    tc = TrainConfig(**{**cfg.train.to_dict(), "query": args.query})
    tlog = TrainLog()
    P.run_stage2(model, resp, corpus, vocab, cfg, tlog, train_cfg=tc)
    save_model(out / "model.json", model)
    _write_log(out, tlog)
    for e in tlog.epochs:
        print(json.dumps(e, sort_keys=True))


def cmd_summarize(args, cfg, out):
    corpus, vocab = P.load_inputs(args.corpus)
    model = load_model(args.model)
    rows = P.summarize(model, corpus, vocab, _split(args, cfg), args.mode, cfg.seed)
    write_summaries(out / "summaries.jsonl", rows)


def cmd_baselines(args, cfg, out):
    corpus, vocab = P.load_inputs(args.corpus)
    split = _split(args, cfg)
    if args.method == "lead40":
        rows = P.baseline_summaries(corpus, split, "lead40", cfg.eval.lead_fraction)
    else:
        emb = encoder_embedder(load_model(args.model), vocab) if args.model else None
        rows = P.baseline_summaries(corpus, split, "textrank", cfg.eval.textrank_budget, emb)
    write_summaries(out / "summaries.jsonl", rows)


def cmd_eval_metrics(args, cfg, out):
    corpus, vocab = P.load_inputs(args.corpus)
    split = _split(args, cfg)
    rep = P.evaluate_method(args.method, corpus, vocab, split, read_summaries(args.summaries))
    write_json(out / "metrics.json", rep)
    write_per_doc_csv(out / "per_doc.csv", rep["metrics"]["per_document"])
    table = render_table([rep])
    (out / "table.txt").write_text(table, encoding="utf-8")
    plot_length_ratios({args.method: [d["length_ratio"] for d in rep["metrics"]["per_document"]]},
                       out / "length_ratios.png")
    print(table, end="")


def cmd_eval_predictiveness(args, cfg, out):
    corpus, vocab = P.load_inputs(args.corpus)
    split = _split(args, cfg)
    resp = load_responder(args.responder)
    query = args.query or (resp.kind if resp.kind in ("readmission", "phenotype", "combined") else cfg.eval.query)
    summaries = read_summaries(args.summaries)
    samples = P.predictiveness_samples(corpus, vocab, split, summaries, resp.cfg.max_len)
    block = P.predictiveness(samples, resp, query, cfg.predictiveness_config(), workers=args.workers)
    rep = build_report(args.method, None, block, {"query": query, "split": split})
    write_json(out / "predictiveness.json", rep)
    table = render_table([rep])
    (out / "table.txt").write_text(table, encoding="utf-8")
    print(table, end="")


def cmd_eval_manual(args, cfg, out):
    with open(args.scores, encoding="utf-8", newline="") as fh:
        rows = []
        for r in csv.DictReader(fh):
            rows.append({k: (v if k in ("note_id", "method") else float(v)) for k, v in r.items()})
    res = manual_agg(ManualScoreSheet(rows), args.a, args.b)
    write_json(out / "manual.json", {"method_a": args.a, "method_b": args.b, "ties": "excluded from the test",
                                     "metrics": res})
    for m, r in res.items():
        p = "n/a" if r["p_value"] is None else f"{r['p_value']:.6g}"
        print(f"{m}: mean {r['mean_a']:.3f} vs {r['mean_b']:.3f}  wins {r['wins']} losses {r['losses']} "
              f"ties {r['ties']}  p {p}")


def cmd_check_grads(args, cfg, out):
    errs = []
    for s in range(args.seeds):
        err, n = stage2_grad_check(cfg.seed + s)
        errs.append({"seed": cfg.seed + s, "relative_error": err, "checks": n})
    worst = max(e["relative_error"] for e in errs)
    write_json(out / "check_grads.json", {"seeds": errs, "max_relative_error": worst, "tolerance": 1e-4})
    print(f"max relative error {worst:.3e}")
    return 0 if worst <= 1e-4 else 1


def cmd_sweep(args, cfg, out):
    corpus, vocab = P.load_inputs(args.corpus)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {args.values!r}")
    resp = load_responder(args.responder)
    rows = P.sweep(args.param, values, args.model, resp, corpus, vocab, cfg, args.split)
    P.write_sweep(rows, args.param, out)
    for r in rows:
        print(json.dumps(r, sort_keys=True))


def cmd_pipeline(args, cfg, out):
    report = P.run_pipeline(cfg, out, workers=args.workers)
    print(render_table(report["methods"]), end="")


COMMANDS = {
    "corpus-generate": cmd_corpus_generate, "corpus-preprocess": cmd_corpus_preprocess,
    "train-responder": cmd_train_responder, "train-stage0": cmd_train_stage0, "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2, "summarize": cmd_summarize, "eval-metrics": cmd_eval_metrics,
    "eval-predictiveness": cmd_eval_predictiveness, "eval-manual": cmd_eval_manual, "baselines": cmd_baselines,
    "check-grads": cmd_check_grads, "sweep": cmd_sweep, "pipeline": cmd_pipeline,
}


def run(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _check_inputs(args)
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"querysumm: error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out or Path("runs") / args.command)
    try:
        cfg = _run_config(args)
        out.mkdir(parents=True, exist_ok=True)
        _setup_logging(out)
        _record(out, args, cfg)
        code = COMMANDS[args.command](args, cfg, out)
        return 0 if code is None else code
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"querysumm: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command}), file=sys.stderr)
        return 1
    finally:
        _close_logging()


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
