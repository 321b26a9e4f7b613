"""Base prompts, evidence-conditioned prompt encoder, claim encoding, loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import LABELS, Dataset, Vocab, word_tokens
from .encoder import EncoderParams, embed_tokens, plain_step
from .tensor import Tensor


@dataclass
class PromptBank:
    base: dict[str, Tensor]  # label -> (M, d) base prompt embeddings
    w_alpha: Tensor          # (d, d)
    b_alpha: Tensor          # (1, d)
    w_beta: Tensor
    b_beta: Tensor
    tau: float
    n_prompts: int

    def named_parameters(self):
        for label, t in self.base.items():
            yield f"prompt.base.{label}", t
        yield "prompt.w_alpha", self.w_alpha
        yield "prompt.b_alpha", self.b_alpha
        yield "prompt.w_beta", self.w_beta
        yield "prompt.b_beta", self.b_beta


def base_prompt_matrix(dataset: Dataset, label: str, n_prompts: int,
                       embedding: np.ndarray, vocab: Vocab) -> np.ndarray:
    """Initialize one label's base prompts from the graph word embeddings.

    Per claim of the label: truncate each evidence / context / reference
    document to the first `n_prompts` words, average embeddings position-wise
    within each of the three vertex sets, average the three set matrices,
    then average over claims. Positions no document covers fall back to the
    mean of the embedding table; a label absent from the split falls back to
    that mean everywhere (callers warn and may randomize instead).
    """
    m, d = n_prompts, embedding.shape[1]
    table_mean = embedding.mean(axis=0)
    claims = [c for c in dataset.ordered_claims() if c.label == label]
    if not claims or m == 0:
        return np.tile(table_mean, (m, 1))

    def set_matrix(texts):
        acc = np.zeros((m, d))
        cover = np.zeros(m)
        for text in texts:
            toks = word_tokens(text)[:m]
            for p, tok in enumerate(toks):
                acc[p] += embedding[vocab.get(tok)]
                cover[p] += 1
        out = np.tile(table_mean, (m, 1))
        covered = cover > 0
        out[covered] = acc[covered] / cover[covered, None]
        return out

    total = np.zeros((m, d))
    for claim in claims:
        ev = [dataset.evidence[eid] for eid in claim.evidence_ids]
        ev_texts = [e.text for e in ev]
        ctx_texts = [dataset.contexts[e.context_id].text for e in ev]
        ref_texts = [dataset.references[rid].text for e in ev for rid in e.reference_ids]
        total += (set_matrix(ev_texts) + set_matrix(ctx_texts) + set_matrix(ref_texts)) / 3.0
    return total / len(claims)


def init_prompt_bank(dataset: Dataset, n_prompts: int, tau: float,
                     encoder_params: EncoderParams, vocab: Vocab,
                     rng: np.random.Generator, random_init: bool = False) -> PromptBank:
    d = encoder_params.d
    bound = 1.0 / math.sqrt(d)
    base = {}
    for label in LABELS:
        if random_init or not any(c.label == label for c in dataset.claims.values()):
            base[label] = T.parameter(rng.uniform(-bound, bound, size=(n_prompts, d)))
        else:
            base[label] = T.parameter(
                base_prompt_matrix(dataset, label, n_prompts, encoder_params.embedding.data, vocab))
    return PromptBank(
        base=base,
        w_alpha=T.parameter(rng.uniform(-bound, bound, size=(d, d))),
        b_alpha=T.parameter(np.zeros((1, d))),
        w_beta=T.parameter(rng.uniform(-bound, bound, size=(d, d))),
        b_beta=T.parameter(np.zeros((1, d))),
        tau=tau,
        n_prompts=n_prompts,
    )


def condition_prompts(h_evidence: Tensor, bank: PromptBank,
                      identity: bool = False) -> dict[str, Tensor]:
    """Scale-and-shift every label's base prompts by tanh-squashed projections
    of the evidence embedding. With `identity` the conditioner is bypassed
    (the zero-conditioner path used by the no-prompt-encoder ablation)."""
    if identity:
        return dict(bank.base)
    alpha = T.tanh(T.scalar_divide(
        T.add(T.matmul(h_evidence, bank.w_alpha), bank.b_alpha), bank.tau))
    beta = T.tanh(T.scalar_divide(
        T.add(T.matmul(h_evidence, bank.w_beta), bank.b_beta), bank.tau))
    ones = T.constant(np.ones_like(alpha.data))
    scale = T.add(alpha, ones)
    return {label: T.add(T.multiply(base, scale), beta)
            for label, base in bank.base.items()}


def encode_claim(claim_ids: list[int], prompts: Tensor | None,
                 params: EncoderParams, max_len: int) -> Tensor:
    """Encode [CLS, prompts..., claim tokens...] with L plain steps.

    Prompts receive no positional encodings and are never truncated; claim
    tokens are truncated so the positional table is not exceeded.
    """
    m = 0 if prompts is None else prompts.shape[0]
    ids = claim_ids[:max(2, max_len - m)]
    emb = embed_tokens(ids, params)
    if m > 0:
        seq = T.concat_rows([T.slice_rows(emb, 0, 1), prompts, T.slice_rows(emb, 1, len(ids))])
    else:
        seq = emb
    h = seq
    for sp in params.steps:
        h = plain_step(h, sp)
    return T.slice_rows(h, 0, 1)


def verdict_scores(h_evidence: Tensor, h_claim_by_label: dict[str, Tensor]) -> dict[str, Tensor]:
    return {label: T.dot(h, h_evidence) for label, h in h_claim_by_label.items()}


def contrastive_loss(scores: dict[str, Tensor], gold_label: str) -> Tensor:
    """-log softmax probability of the gold label's score (max-shifted)."""
    shift = max(s.data.item() for s in scores.values())
    neg_shift = T.constant(np.array([[-shift]]))
    sum_exp = None
    for label in LABELS:
        if label not in scores:
            continue
        e = T.exp(T.add(scores[label], neg_shift))
        sum_exp = e if sum_exp is None else T.add(sum_exp, e)
    gold_shifted = T.add(scores[gold_label], neg_shift)
    return T.add(T.log(sum_exp), T.multiply(gold_shifted, T.constant(np.array([[-1.0]]))))


def predict(scores: dict[str, Tensor | float]) -> str:
    """Argmax label, ties broken by the fixed order SUPPORT < REFUTE < NEI."""
    best, best_score = None, -math.inf
    for label in LABELS:
        if label not in scores:
            continue
        s = scores[label]
        val = s.data.item() if isinstance(s, Tensor) else float(s)
        if val > best_score:
            best, best_score = label, val
    return best
