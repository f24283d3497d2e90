import numpy as np
import pytest

from querysumm.corpus import GeneratorConfig, build_vocabulary, generate_corpus, preprocess_corpus
from querysumm.corpus.vocab import BOS
from querysumm.responder import (
    QueryResponder, QuerySpec, ResponderConfig, ResponderTrainConfig, build_examples, class_census, combine_re_ph,
    load_responder, make_nextnote_pairs, predict, resample_binary, save_responder, train_responder,
)
from querysumm.substrate import AdamState, Tensor, adam_step, backward, ops

VS = 30


def micro(kind="combined", **kw):
    base = dict(vs=VS, d=16, n_layers=1, n_heads=2, ff_dim=16, max_len=40, init_seed=2)
    base.update(kw)
    return QueryResponder(ResponderConfig(**base), kind)


def docs(rng, n, lo=3, hi=12):
    return [[int(x) for x in rng.integers(6, VS, int(rng.integers(lo, hi)))] for _ in range(n)]


@pytest.fixture(scope="module")
def small_corpus():
    c = preprocess_corpus(generate_corpus(GeneratorConfig(n_train=30, n_val=5, n_test=5), 0))
    return c, build_vocabulary(c.split("train"))


def test_query_spec():
    dims = {"readmission": 2, "phenotype": 25, "combined": 50, "nextnote": 2, "similarity": 64}
    for k, d in dims.items():
        assert QuerySpec(k).output_dim == d
    with pytest.raises(ValueError):
        QuerySpec("mortality")


def test_outputs_are_distributions():
    rng = np.random.default_rng(0)
    r = micro()
    batch = docs(rng, 5)
    for kind, dim in (("readmission", 2), ("phenotype", 25), ("combined", 50)):
        out = r.as_kind(kind).respond_batch(batch).data
        assert out.shape == (5, dim)
        assert (out >= 0).all() and np.allclose(out.sum(axis=1), 1.0, atol=1e-9)
    sim = r.as_kind("similarity").respond_batch(batch).data
    assert sim.shape == (5, 16)


def test_onehot_matches_ids():
    rng = np.random.default_rng(1)
    r = micro()
    for d in docs(rng, 4):
        a = r.respond(d).data
        b = r.respond(Tensor(ops.one_hot(d, VS))).data
        assert np.max(np.abs(a - b)) <= 1e-12
    # batched padding does not change answers
    batch = docs(rng, 3)
    together = r.respond_batch(batch).data
    for i, d in enumerate(batch):
        assert np.max(np.abs(together[i] - r.respond(d).data)) <= 1e-12


def test_pair_response():
    rng = np.random.default_rng(2)
    r = micro("nextnote")
    a, b = docs(rng, 2)
    p = r.respond_pair(a, b).data
    assert p.shape == (2,) and abs(p.sum() - 1) < 1e-12
    assert np.array_equal(r.respond_pair(a, a).data, r.respond_pair(a, a).data)
    oh = r.respond_pair(Tensor(ops.one_hot(a, VS)), b).data
    assert np.max(np.abs(oh - p)) <= 1e-12
    with pytest.raises(ValueError):
        r.respond_pair(list(range(6, 26)), list(range(6, 26)))
    with pytest.raises(ValueError):
        r.respond_pair([], b)
    with pytest.raises(ValueError):
        r.respond(a)


def test_unknown_head_rejected():
    r = micro("readmission")
    with pytest.raises(ValueError):
        r.as_kind("phenotype")


def test_combine_examples_and_marginals():
    p_re = np.array([1.0, 0.0])
    p_ph = np.eye(25)[3]
    out = combine_re_ph(p_re, p_ph).data
    assert out.shape == (50,) and out[2 * 3 + 0] == 1.0 and out.sum() == 1.0
    u = combine_re_ph(np.full(2, 0.5), np.full(25, 1 / 25)).data
    assert np.allclose(u, 1 / 50, atol=1e-15)
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.dirichlet(np.ones(2))
        b = rng.dirichlet(np.ones(25))
        out = combine_re_ph(a, b).data
        assert abs(out.sum() - 1) <= 1e-9
        grid = out.reshape(25, 2)
        assert np.max(np.abs(grid.sum(axis=0) - a)) <= 1e-12
        assert np.max(np.abs(grid.sum(axis=1) - b)) <= 1e-12
    with pytest.raises(ValueError):
        combine_re_ph(np.array([0.7, 0.7]), b)


def test_gradient_through_summary_onehots():
    rng = np.random.default_rng(4)
    r = micro().freeze()
    target = r.respond(docs(rng, 1)[0]).data
    logits = Tensor(rng.normal(size=(6, VS)), requires_grad=True)
    hard, soft = ops.gumbel_softmax_st(logits, 1.0, rng)
    loss = ops.cross_entropy_soft(Tensor(target), r.respond(hard))
    backward(loss)
    assert np.isfinite(logits.grad).all() and np.abs(logits.grad).sum() > 0
    assert all(t.grad is None for _, t in r.store.items())


def test_frozen_responder_unchanged_by_optimizer():
    rng = np.random.default_rng(5)
    r = micro().freeze()
    before = r.store.checksum()
    for _, t in r.store.items():
        t.grad = np.ones_like(t.data)
    adam_step(r.store, AdamState(lr=0.1))
    assert r.store.checksum() == before
    assert r.frozen
    del rng


def test_nextnote_pairs(small_corpus):
    c, _ = small_corpus
    adms = c.split("train")
    triples = make_nextnote_pairs(adms, seed=3)
    assert triples == make_nextnote_pairs(adms, seed=3)
    by_id = {a.admission_id: a for a in adms}
    n_notes = sum(len(a.nursing_notes) for a in adms)
    assert len(triples) == n_notes
    for n, pos, neg in triples:
        adm = by_id[n.admission_id]
        last = n.seq_index == len(adm.nursing_notes)
        if last:
            assert pos is adm.discharge_summary
            assert neg.patient_id != n.patient_id
        else:
            assert pos.seq_index == n.seq_index + 1 and pos.admission_id == n.admission_id
        if neg.admission_id == n.admission_id:
            assert neg.seq_index != n.seq_index + 1 and neg.seq_index != n.seq_index
        assert not neg.is_discharge_summary


def test_nextnote_skips_single_note_without_summary(small_corpus):
    from querysumm.corpus import Admission
    c, _ = small_corpus
    a = c.split("train")[0]
    lone = Admission(a.record, [a.nursing_notes[0]])
    assert make_nextnote_pairs([lone], seed=0) == []


def test_resample_ratio():
    rng = np.random.default_rng(6)
    labels = np.array([True] * 30 + [False] * 270)
    for ratio in (1.0, 0.5):
        idx = resample_binary(labels, ratio, 400, rng)
        pos = labels[idx].sum()
        assert len(idx) == 400
        assert abs(pos / (400 - pos) - ratio) < 0.01


def test_class_census_rejects_missing(small_corpus):
    c, v = small_corpus
    ex = build_examples(c.split("train"), v, "readmission", 256)
    for e in ex:
        e[1]["re"] = 1
    with pytest.raises(ValueError, match="readmitted"):
        class_census("readmission", ex)
    ex = build_examples(c.split("train"), v, "phenotype", 256)
    for e in ex:
        e[1]["ph"][4] = 0.0
    with pytest.raises(ValueError, match="phenotype"):
        class_census("phenotype", ex)


def test_train_responder_small_and_checkpoint(small_corpus, tmp_path):
    c, v = small_corpus
    rcfg = ResponderConfig(vs=len(v), d=16, n_layers=1, n_heads=2, ff_dim=16)
    hyper = ResponderTrainConfig(epochs=1, batch_size=32)
    r = train_responder(c.split("train"), v, "nextnote", rcfg, hyper)
    assert r.frozen and r.kind == "nextnote"
    save_responder(tmp_path / "r.json", r)
    r2 = load_responder(tmp_path / "r.json")
    assert r2.kind == "nextnote" and r2.frozen
    assert r2.store.checksum() == r.store.checksum()
    ex = build_examples(c.split("val"), v, "nextnote", 256)
    p1 = predict(r, [e[0] for e in ex])["nn"]
    p2 = predict(r2, [e[0] for e in ex])["nn"]
    assert np.array_equal(p1, p2)
    with pytest.raises(ValueError):
        train_responder(c.split("train"), v, "similarity", rcfg, hyper)


def test_similarity_view_of_responder():
    r = micro()
    s = r.as_kind("similarity")
    rng = np.random.default_rng(7)
    d = docs(rng, 1)[0]
    x, mask = r.embed_ids([d])
    assert np.array_equal(s.respond(d).data, r.pooled(x, mask).data[0])
    assert BOS == 1


def test_subsample_doc_is_ordered_nonempty_subsequence():
    from querysumm.responder.train import subsample_doc
    rng = np.random.default_rng(0)
    doc = list(range(100, 160))
    sizes = []
    for _ in range(200):
        sub = subsample_doc(doc, rng)
        it = iter(doc)
        assert sub and all(t in it for t in sub)  # ordered subsequence
        sizes.append(len(sub))
    assert min(sizes) < 15 and max(sizes) > 50
    assert subsample_doc([7], rng) == [7]
    with pytest.raises(ValueError):
        ResponderTrainConfig(subsample_prob=1.5)
