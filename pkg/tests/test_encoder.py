import math

import numpy as np
import pytest

from evigraph import tensor as T
from evigraph.corpus import Claim, Dataset, Document, EvidenceSentence
from evigraph.encoder import (EncoderParams, asymmetric_msa,
                              augment_virtual_tokens, cross_layer_aggregate,
                              embed_tokens, encode_evidence_graph,
                              gnn_aggregate, init_encoder_params,
                              intra_layer_aggregate, plain_step, pool_evidence)
from evigraph.graph import build_graph

D = 8
HEADS = 2


@pytest.fixture
def params():
    return init_encoder_params(vocab_size=20, d=D, n_heads=HEADS, n_steps=2,
                               max_len=16, rng=np.random.default_rng(0))


def rand(rng, *shape):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# independent oracles, written with explicit python loops


def oracle_leaky(x):
    return np.where(x > 0, x, 0.01 * x)


def oracle_softmax_row(row):
    e = np.exp(row - row.max())
    return e / e.sum()


def oracle_gnn(center, neighbors, w, b_self, b_neigh):
    """Loop-form neighbor aggregation."""
    pc = center @ w
    if neighbors is None or len(neighbors) == 0:
        return pc
    pn = [n @ w for n in neighbors]
    scores = np.array([oracle_leaky(np.array([float(pc @ b_self + p @ b_neigh)]))[0]
                       for p in pn])
    att = oracle_softmax_row(scores)
    weighted = sum(a * p for a, p in zip(att, pn))
    return 0.5 * (pc + weighted)


def oracle_attention(hq, hkv, wq_list, wk_list, wv_list, wo_list):
    """Loop-form multi-head attention with per-row softmax."""
    dh = wq_list[0].shape[1]
    out = np.zeros((hq.shape[0], wo_list[0].shape[1]))
    for wq, wk, wv, wo in zip(wq_list, wk_list, wv_list, wo_list):
        q, k, v = hq @ wq, hkv @ wk, hkv @ wv
        for i in range(q.shape[0]):
            scores = np.array([float(q[i] @ k[j]) / math.sqrt(dh)
                               for j in range(k.shape[0])])
            att = oracle_softmax_row(scores)
            ctx = sum(a * v[j] for j, a in enumerate(att))
            out[i] += ctx @ wo
    return out


def oracle_layer_norm(x, g, b, eps=1e-5):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        mu = x[i].mean()
        var = ((x[i] - mu) ** 2).mean()
        out[i] = g * (x[i] - mu) / math.sqrt(var + eps) + b
    return out


def oracle_step(hq, hkv, sp):
    wq = [t.data for t in sp.wq]
    wk = [t.data for t in sp.wk]
    wv = [t.data for t in sp.wv]
    wo = [t.data for t in sp.wo]
    x = hq + oracle_attention(hq, hkv, wq, wk, wv, wo)
    x = oracle_layer_norm(x, sp.ln1_g.data[0], sp.ln1_b.data[0])
    m = oracle_leaky(x @ sp.w1.data + sp.b1.data)
    m = m @ sp.w2.data + sp.b2.data
    return oracle_layer_norm(x + m, sp.ln2_g.data[0], sp.ln2_b.data[0])


# ---------------------------------------------------------------------------


class TestGnnAggregate:
    def test_matches_loop_oracle(self, params):
        rng = np.random.default_rng(1)
        gp = params.gnn["evidence"]
        for n in (1, 2, 4):
            center = rand(rng, 1, D)
            neigh = rand(rng, n, D)
            agg, w = gnn_aggregate(T.constant(center), T.constant(neigh), gp)
            want = oracle_gnn(center[0], list(neigh), gp.w.data,
                              gp.b_self.data[0], gp.b_neigh.data[0])
            assert np.max(np.abs(agg.data[0] - want)) < 1e-9
            assert w.sum() == pytest.approx(1.0, abs=1e-6)

    def test_no_neighbors_degenerates_to_projection(self, params):
        rng = np.random.default_rng(2)
        gp = params.gnn["reference"]
        center = rand(rng, 1, D)
        agg, w = gnn_aggregate(T.constant(center), None, gp)
        assert w is None
        assert np.max(np.abs(agg.data - center @ gp.w.data)) < 1e-12

    def test_intra_layer_matches_oracle(self, params):
        rng = np.random.default_rng(3)
        gp = params.gnn["evidence"]
        cls = [rand(rng, 1, D) for _ in range(3)]
        results = intra_layer_aggregate([T.constant(c) for c in cls], gp)
        for i, (agg, w) in enumerate(results):
            others = [c[0] for j, c in enumerate(cls) if j != i]
            want = oracle_gnn(cls[i][0], others, gp.w.data,
                              gp.b_self.data[0], gp.b_neigh.data[0])
            assert np.max(np.abs(agg.data[0] - want)) < 1e-9
            assert len(w) == 2

    def test_cross_layer_matches_oracle(self, params):
        rng = np.random.default_rng(4)
        ev = rand(rng, 1, D)
        ctx = rand(rng, 1, D)
        refs = rand(rng, 3, D)
        (h_c, w_c), (h_r, w_r) = cross_layer_aggregate(
            T.constant(ev), T.constant(ctx), T.constant(refs), params.gnn)
        gc = params.gnn["context"]
        gr = params.gnn["reference"]
        want_c = oracle_gnn(ev[0], [ctx[0]], gc.w.data, gc.b_self.data[0], gc.b_neigh.data[0])
        want_r = oracle_gnn(ev[0], list(refs), gr.w.data, gr.b_self.data[0], gr.b_neigh.data[0])
        assert np.max(np.abs(h_c.data[0] - want_c)) < 1e-9
        assert np.max(np.abs(h_r.data[0] - want_r)) < 1e-9
        assert w_c[0] == pytest.approx(1.0, abs=1e-6)  # single context
        assert w_r.sum() == pytest.approx(1.0, abs=1e-6)

    def test_identical_neighbors_get_uniform_weights(self, params):
        rng = np.random.default_rng(5)
        gp = params.gnn["evidence"]
        row = rand(rng, 1, D)
        neigh = np.repeat(row * 0.5, 4, axis=0)
        _, w = gnn_aggregate(T.constant(row), T.constant(neigh), gp)
        assert np.max(np.abs(w - 0.25)) < 1e-12


class TestTransformerSteps:
    def test_plain_step_matches_oracle(self, params):
        rng = np.random.default_rng(6)
        h = rand(rng, 5, D)
        got = plain_step(T.constant(h), params.steps[0])
        want = oracle_step(h, h, params.steps[0])
        assert np.max(np.abs(got.data - want)) < 1e-9

    @pytest.mark.parametrize("n_virtual", [0, 1, 2, 3])
    def test_asymmetric_msa_length_invariant(self, params, n_virtual):
        rng = np.random.default_rng(7)
        h = rand(rng, 6, D)
        virtual = [T.constant(rand(rng, 1, D)) for _ in range(n_virtual)] + [None] * (3 - n_virtual)
        aug = augment_virtual_tokens(T.constant(h), *virtual)
        assert aug.shape == (6 + n_virtual, D)
        out = asymmetric_msa(T.constant(h), aug, params.steps[1])
        assert out.shape == (6, D)
        want = oracle_step(h, aug.data, params.steps[1])
        assert np.max(np.abs(out.data - want)) < 1e-9

    def test_no_virtual_tokens_equals_plain_step(self, params):
        rng = np.random.default_rng(8)
        h = T.constant(rand(rng, 4, D))
        aug = augment_virtual_tokens(h, None, None, None)
        got = asymmetric_msa(h, aug, params.steps[1])
        want = plain_step(h, params.steps[1])
        assert np.array_equal(got.data, want.data)

    def test_attention_rows_sum_to_one(self):
        # check the softmax the step actually computes, by reconstruction
        rng = np.random.default_rng(9)
        sp = init_encoder_params(10, D, HEADS, 1, 8, rng).steps[0]
        h = rand(rng, 5, D)
        aug = rand(rng, 8, D)
        dh = D // HEADS
        for wq, wk in zip(sp.wq, sp.wk):
            scores = (h @ wq.data) @ (aug @ wk.data).T / math.sqrt(dh)
            att = T.softmax_rows(T.constant(scores)).data
            assert np.max(np.abs(att.sum(axis=1) - 1.0)) < 1e-6

    def test_embed_tokens_adds_positions(self, params):
        ids = [2, 5, 5]
        got = embed_tokens(ids, params)
        want = params.embedding.data[ids] + params.positional.data[:3]
        assert np.array_equal(got.data, want)


def tiny_graph_dataset(n_evidence=2, n_refs=(1, 0)):
    ds = Dataset()
    ev_ids = []
    for i in range(n_evidence):
        cid = f"ctx{i}"
        ds.contexts[cid] = Document(cid, f"context {i}", "context")
        rids = []
        for j in range(n_refs[i] if i < len(n_refs) else 0):
            rid = f"r{i}{j}"
            ds.references[rid] = Document(rid, f"ref {i}{j}", "reference")
            rids.append(rid)
        eid = f"e{i}"
        ds.evidence[eid] = EvidenceSentence(eid, f"evidence {i}", cid, rids)
        ev_ids.append(eid)
    ds.claims["c"] = Claim("c", "the claim", "NEI", ev_ids)
    ds.claim_order = ["c"]
    return ds


def token_map(graph, rng, lo=3, hi=19, n=4):
    ids = {}
    for e in graph.evidence:
        ids[e.id] = [2] + list(rng.integers(lo, hi, size=n))
    for cid in graph.contexts:
        ids[cid] = [2] + list(rng.integers(lo, hi, size=n))
    for rid in graph.references:
        ids[rid] = [2] + list(rng.integers(lo, hi, size=n))
    return ids


class TestFullEncoding:
    def test_output_shape_and_order(self, params):
        ds = tiny_graph_dataset(3, (1, 2, 0))
        g = build_graph(ds.claims["c"], ds)
        ids = token_map(g, np.random.default_rng(10))
        hs, _ = encode_evidence_graph(g, params, ids)
        assert len(hs) == 3
        assert all(h.shape == (1, D) for h in hs)

    def test_evidence_order_equivariance(self, params):
        ds = tiny_graph_dataset(3, (1, 2, 0))
        claim = ds.claims["c"]
        g1 = build_graph(claim, ds, evidence_ids=["e0", "e1", "e2"])
        g2 = build_graph(claim, ds, evidence_ids=["e2", "e0", "e1"])
        ids = token_map(g1, np.random.default_rng(11))
        h1, _ = encode_evidence_graph(g1, params, ids)
        h2, _ = encode_evidence_graph(g2, params, ids)
        # per-evidence embeddings permute with the input order
        by_id1 = dict(zip(["e0", "e1", "e2"], h1))
        by_id2 = dict(zip(["e2", "e0", "e1"], h2))
        for eid in by_id1:
            assert np.max(np.abs(by_id1[eid].data - by_id2[eid].data)) < 1e-9
        # and the pooled evidence embedding is order-invariant
        p1 = pool_evidence(h1).data
        p2 = pool_evidence(h2).data
        assert np.max(np.abs(p1 - p2)) < 1e-9

    def test_disabled_reference_layer_ignores_reference_text(self, params):
        ds = tiny_graph_dataset(2, (1, 1))
        g = build_graph(ds.claims["c"], ds)
        rng = np.random.default_rng(12)
        ids = token_map(g, rng)
        h1, _ = encode_evidence_graph(g, params, ids, use_reference_layer=False)
        ids2 = dict(ids)
        for rid in g.references:
            ids2[rid] = [2, 3, 3, 3, 3]
        h2, _ = encode_evidence_graph(g, params, ids2, use_reference_layer=False)
        for a, b in zip(h1, h2):
            assert np.array_equal(a.data, b.data)

    def test_disabled_layers_still_run(self, params):
        ds = tiny_graph_dataset(2, (1, 1))
        g = build_graph(ds.claims["c"], ds)
        ids = token_map(g, np.random.default_rng(13))
        for kwargs in ({"use_evidence_layer": False},
                       {"use_context_layer": False},
                       {"use_evidence_layer": False, "use_context_layer": False,
                        "use_reference_layer": False}):
            hs, _ = encode_evidence_graph(g, params, ids, **kwargs)
            assert len(hs) == 2

    def test_single_step_encoder_is_plain(self):
        # L=1: only the initialization step runs; no graph reasoning, so the
        # result equals a plain step over the evidence tokens alone
        params = init_encoder_params(20, D, HEADS, 1, 16, np.random.default_rng(14))
        ds = tiny_graph_dataset(1, (1,))
        g = build_graph(ds.claims["c"], ds)
        ids = token_map(g, np.random.default_rng(15))
        hs, _ = encode_evidence_graph(g, params, ids)
        want = plain_step(embed_tokens(ids["e0"], params), params.steps[0])
        assert np.array_equal(hs[0].data, want.data[:1])

    def test_trace_weights_sum_to_one(self, params):
        ds = tiny_graph_dataset(3, (2, 1, 0))
        g = build_graph(ds.claims["c"], ds)
        ids = token_map(g, np.random.default_rng(16))
        _, traces = encode_evidence_graph(g, params, ids, collect_trace=True)
        assert traces, "expected at least one traced step"
        for tr in traces:
            for group in ("intra", "context", "reference"):
                for weights in tr[group].values():
                    assert sum(weights.values()) == pytest.approx(1.0, abs=1e-6)

    def test_pool_single_evidence_identity(self, params):
        h = T.constant(np.random.default_rng(17).standard_normal((1, D)))
        assert pool_evidence([h]) is h

    def test_width_head_mismatch_rejected(self):
        with pytest.raises(ValueError):
            init_encoder_params(10, 10, 3, 1, 8, np.random.default_rng(0))
