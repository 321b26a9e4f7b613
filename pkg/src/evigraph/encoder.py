"""Nested graph-augmented transformer encoder.

Each of the L steps advances every vertex of a claim's three-layer graph:
contexts and references by plain self-attention, evidence sentences by
type-specific neighbor aggregation, virtual-token augmentation, and an
asymmetric attention step whose keys/values see the virtual tokens but
whose queries do not.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import ThreeLayerGraph
from .tensor import Tensor


@dataclass
class GnnParams:
    w: Tensor        # (d, d) type-specific projection
    b_self: Tensor   # (1, d) first half of the 2d attention vector
    b_neigh: Tensor  # (1, d) second half


@dataclass
class StepParams:
    wq: list[Tensor]  # per head, (d, d_head)
    wk: list[Tensor]
    wv: list[Tensor]
    wo: list[Tensor]  # per head, (d_head, d); summing equals concat + output proj
    w1: Tensor        # (d, d_ff)
    b1: Tensor
    w2: Tensor        # (d_ff, d)
    b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class EncoderParams:
    d: int
    n_heads: int
    embedding: Tensor   # (vocab, d)
    positional: Tensor  # (max_len, d), learned
    steps: list[StepParams]
    gnn: dict[str, GnnParams]  # "evidence" | "reference" | "context"

    def named_parameters(self):
        yield "embedding", self.embedding
        yield "positional", self.positional
        for l, sp in enumerate(self.steps):
            for h in range(self.n_heads):
                yield f"step{l}.wq{h}", sp.wq[h]
                yield f"step{l}.wk{h}", sp.wk[h]
                yield f"step{l}.wv{h}", sp.wv[h]
                yield f"step{l}.wo{h}", sp.wo[h]
            for name in ("w1", "b1", "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                yield f"step{l}.{name}", getattr(sp, name)
        for kind, gp in self.gnn.items():
            yield f"gnn.{kind}.w", gp.w
            yield f"gnn.{kind}.b_self", gp.b_self
            yield f"gnn.{kind}.b_neigh", gp.b_neigh


def _uniform(rng, shape, bound):
    return T.parameter(rng.uniform(-bound, bound, size=shape))


def init_encoder_params(vocab_size: int, d: int, n_heads: int, n_steps: int,
                        max_len: int, rng: np.random.Generator) -> EncoderParams:
    if d % n_heads != 0:
        raise ValueError(f"model width {d} not divisible by n_heads {n_heads}")
    dh = d // n_heads
    bound = 1.0 / math.sqrt(d)
    steps = []
    for _ in range(n_steps):
        steps.append(StepParams(
            wq=[_uniform(rng, (d, dh), bound) for _ in range(n_heads)],
            wk=[_uniform(rng, (d, dh), bound) for _ in range(n_heads)],
            wv=[_uniform(rng, (d, dh), bound) for _ in range(n_heads)],
            wo=[_uniform(rng, (dh, d), bound) for _ in range(n_heads)],
            w1=_uniform(rng, (d, 2 * d), bound),
            b1=T.parameter(np.zeros((1, 2 * d))),
            w2=_uniform(rng, (2 * d, d), bound),
            b2=T.parameter(np.zeros((1, d))),
            ln1_g=T.parameter(np.ones((1, d))),
            ln1_b=T.parameter(np.zeros((1, d))),
            ln2_g=T.parameter(np.ones((1, d))),
            ln2_b=T.parameter(np.zeros((1, d))),
        ))
    gnn = {kind: GnnParams(w=_uniform(rng, (d, d), bound),
                           b_self=_uniform(rng, (1, d), bound),
                           b_neigh=_uniform(rng, (1, d), bound))
           for kind in ("evidence", "reference", "context")}
    return EncoderParams(
        d=d, n_heads=n_heads,
        embedding=_uniform(rng, (vocab_size, d), bound),
        positional=_uniform(rng, (max_len, d), bound),
        steps=steps, gnn=gnn,
    )


# ---------------------------------------------------------------------------
# building blocks


def embed_tokens(ids, params: EncoderParams) -> Tensor:
    """Token embeddings summed with learned positional encodings."""
    emb = T.embedding_lookup(params.embedding, ids)
    pos = T.slice_rows(params.positional, 0, len(ids))
    return T.add(emb, pos)


def _affine_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return T.add(T.multiply(T.layer_norm_rows(x), g), b)


def _multi_head_attention(h_q: Tensor, h_kv: Tensor, sp: StepParams) -> Tensor:
    out = None
    dh = sp.wq[0].shape[1]
    for wq, wk, wv, wo in zip(sp.wq, sp.wk, sp.wv, sp.wo):
        q = T.matmul(h_q, wq)
        k = T.matmul(h_kv, wk)
        v = T.matmul(h_kv, wv)
        scores = T.scalar_divide(T.matmul(q, k, transpose_b=True), math.sqrt(dh))
        head = T.matmul(T.matmul(T.softmax_rows(scores), v), wo)
        out = head if out is None else T.add(out, head)
    return out


def _transformer_step(h_q: Tensor, h_kv: Tensor, sp: StepParams) -> Tensor:
    attn = _multi_head_attention(h_q, h_kv, sp)
    x = _affine_norm(T.add(h_q, attn), sp.ln1_g, sp.ln1_b)
    m = T.leaky_relu(T.add(T.matmul(x, sp.w1), sp.b1))
    m = T.add(T.matmul(m, sp.w2), sp.b2)
    return _affine_norm(T.add(x, m), sp.ln2_g, sp.ln2_b)


def plain_step(h: Tensor, sp: StepParams) -> Tensor:
    """Standard symmetric self-attention step (queries = keys = values source)."""
    return _transformer_step(h, h, sp)


def asymmetric_msa(h: Tensor, h_augmented: Tensor, sp: StepParams) -> Tensor:
    """Attention step with virtual-token-augmented keys/values; output keeps
    the query row count, so virtual tokens never persist into the next step."""
    return _transformer_step(h, h_augmented, sp)


def gnn_aggregate(center_cls: Tensor, neighbor_cls: Tensor | None, gp: GnnParams):
    """Type-specific attention aggregation of neighbor CLS embeddings.

    Projects everything by the type projection, scores each neighbor with a
    leaky-relu of the split attention vector applied to [center || neighbor],
    softmax-normalizes, and means the center projection with the weighted
    neighbor sum. With no neighbors the result degenerates to the projected
    center. Returns (aggregate (1, d), attention weights or None).
    """
    proj_c = T.matmul(center_cls, gp.w)
    if neighbor_cls is None or neighbor_cls.shape[0] == 0:
        return proj_c, None
    proj_n = T.matmul(neighbor_cls, gp.w)
    s_self = T.matmul(proj_c, gp.b_self, transpose_b=True)          # (1, 1)
    s_neigh = T.matmul(gp.b_neigh, proj_n, transpose_b=True)        # (1, n)
    weights = T.softmax_rows(T.leaky_relu(T.add(s_neigh, s_self)))
    weighted = T.matmul(weights, proj_n)
    agg = T.mean_rows(T.concat_rows([proj_c, weighted]))
    return agg, weights.data.ravel().copy()


def intra_layer_aggregate(evidence_cls: list[Tensor], gp: GnnParams):
    """Aggregate each evidence sentence with the other evidence of its claim."""
    results = []
    for i, center in enumerate(evidence_cls):
        others = [h for j, h in enumerate(evidence_cls) if j != i]
        neighbors = T.concat_rows(others) if others else None
        results.append(gnn_aggregate(center, neighbors, gp))
    return results


def cross_layer_aggregate(evidence_cls: Tensor, context_cls: Tensor | None,
                          reference_cls: Tensor | None, gnn: dict[str, GnnParams]):
    """(context aggregate, reference aggregate); either is None when absent."""
    h_c = w_c = h_r = w_r = None
    if context_cls is not None:
        h_c, w_c = gnn_aggregate(evidence_cls, context_cls, gnn["context"])
    if reference_cls is not None and reference_cls.shape[0] > 0:
        h_r, w_r = gnn_aggregate(evidence_cls, reference_cls, gnn["reference"])
    return (h_c, w_c), (h_r, w_r)


def augment_virtual_tokens(h_tokens: Tensor, h_c: Tensor | None, h_r: Tensor | None,
                           h_e: Tensor | None) -> Tensor:
    """Row concatenation [context ; reference ; evidence ; tokens], absent
    virtual tokens skipped."""
    rows = [t for t in (h_c, h_r, h_e) if t is not None]
    if not rows:
        return h_tokens
    return T.concat_rows(rows + [h_tokens])


def pool_evidence(h_evidence: list[Tensor]) -> Tensor:
    """Mean of per-evidence final CLS embeddings -> single evidence embedding."""
    if not h_evidence:
        raise ValueError("pool_evidence requires at least one evidence embedding")
    if len(h_evidence) == 1:
        return h_evidence[0]
    return T.mean_rows(T.concat_rows(h_evidence))


# ---------------------------------------------------------------------------
# full nested encoding


def encode_evidence_graph(graph: ThreeLayerGraph, params: EncoderParams,
                          token_ids: dict[str, list[int]],
                          use_evidence_layer: bool = True,
                          use_context_layer: bool = True,
                          use_reference_layer: bool = True,
                          collect_trace: bool = False):
    """Run the nested encoder over one claim graph.

    `token_ids` maps every vertex id (evidence, context, reference) to its
    token id sequence. Returns (per-evidence CLS embeddings in input order,
    per-step attention traces). Step 0 is a plain symmetric step for every
    vertex; steps 1..L-1 interleave graph reasoning with asymmetric steps.
    With a graph layer disabled its vertices are never encoded, so the
    output is independent of their text.
    """
    ev_ids = [e.id for e in graph.evidence]
    ev_h = {eid: embed_tokens(token_ids[eid], params) for eid in ev_ids}
    ctx_h = {cid: embed_tokens(token_ids[cid], params)
             for cid in graph.contexts} if use_context_layer else {}
    ref_h = {rid: embed_tokens(token_ids[rid], params)
             for rid in graph.references} if use_reference_layer else {}

    # initialization step
    sp0 = params.steps[0]
    ev_h = {k: plain_step(h, sp0) for k, h in ev_h.items()}
    ctx_h = {k: plain_step(h, sp0) for k, h in ctx_h.items()}
    ref_h = {k: plain_step(h, sp0) for k, h in ref_h.items()}

    traces = []
    for l in range(1, len(params.steps)):
        sp = params.steps[l]
        cls = {eid: T.slice_rows(ev_h[eid], 0, 1) for eid in ev_ids}
        trace = {"step": l, "intra": {}, "context": {}, "reference": {}}

        intra = {}
        if use_evidence_layer:
            for eid, (agg, w) in zip(ev_ids,
                                     intra_layer_aggregate([cls[e] for e in ev_ids],
                                                           params.gnn["evidence"])):
                intra[eid] = agg
                if w is not None:
                    others = [o for o in ev_ids if o != eid]
                    trace["intra"][eid] = dict(zip(others, w.tolist()))

        new_ev = {}
        for eid in ev_ids:
            ctx_cls = None
            if use_context_layer:
                cid = graph.context_of[eid]
                ctx_cls = T.slice_rows(ctx_h[cid], 0, 1)
            ref_cls = None
            rids = graph.references_of.get(eid, [])
            if use_reference_layer and rids:
                ref_cls = T.concat_rows([T.slice_rows(ref_h[rid], 0, 1) for rid in rids])
            (h_c, w_c), (h_r, w_r) = cross_layer_aggregate(cls[eid], ctx_cls, ref_cls, params.gnn)
            if w_c is not None:
                trace["context"][eid] = {graph.context_of[eid]: float(w_c[0])}
            if w_r is not None:
                trace["reference"][eid] = dict(zip(rids, w_r.tolist()))
            augmented = augment_virtual_tokens(ev_h[eid], h_c, h_r, intra.get(eid))
            new_ev[eid] = asymmetric_msa(ev_h[eid], augmented, sp)
        ev_h = new_ev
        ctx_h = {k: plain_step(h, sp) for k, h in ctx_h.items()}
        ref_h = {k: plain_step(h, sp) for k, h in ref_h.items()}
        if collect_trace:
            traces.append(trace)

    h_evidence = [T.slice_rows(ev_h[eid], 0, 1) for eid in ev_ids]
    return h_evidence, traces
