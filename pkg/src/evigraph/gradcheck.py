"""End-to-end gradient checking on random toy graphs."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .corpus import Claim, Dataset, Document, EvidenceSentence, build_vocab
from .tensor import backward
from .trainer import Model, ModelConfig

_WORDS = [f"w{i}" for i in range(10)]


def _random_text(rng, lo=3, hi=7):
    n = rng.integers(lo, hi)
    return " ".join(_WORDS[rng.integers(0, len(_WORDS))] for _ in range(n))


def random_toy_instance(seed: int, n_evidence: int | None = None,
                        n_references: int | None = None,
                        n_steps: int = 2, d: int = 8, n_prompts: int = 2):
    """A tiny claim + dataset + model: 1-3 evidence, 0-2 references each."""
    rng = np.random.default_rng(seed)
    if n_evidence is None:
        n_evidence = int(rng.integers(1, 4))
    ds = Dataset(split="toy")
    ev_ids = []
    for i in range(n_evidence):
        refs = []
        n_ref = int(rng.integers(0, 3)) if n_references is None else n_references
        for j in range(n_ref):
            rid = f"r{i}{j}"
            ds.references[rid] = Document(rid, _random_text(rng), "reference")
            refs.append(rid)
        cid = f"c{i}"
        ds.contexts[cid] = Document(cid, _random_text(rng), "context")
        eid = f"e{i}"
        ds.evidence[eid] = EvidenceSentence(eid, _random_text(rng), cid, refs)
        ev_ids.append(eid)
    claim = Claim("x0", _random_text(rng), "REFUTE", ev_ids)
    ds.claims[claim.id] = claim
    ds.claim_order.append(claim.id)

    cfg = ModelConfig(n_steps=n_steps, d=d, n_heads=2, n_prompts=n_prompts,
                      tau=2.0, max_len=12, seed=seed)
    vocab = build_vocab(ds, min_count=1)
    model = Model.build(cfg, ds, vocab)
    return model, ds, claim


def sampled_grad_check(fn, leaves, eps: float = 1e-5, max_coords: int = 24,
                       rng: np.random.Generator | None = None) -> float:
    """grad_check over a random subsample of coordinates per leaf tensor.

    Same error metric as tensor.grad_check; used where exhaustive checking
    is too slow (the full model has thousands of coordinates)."""
    rng = rng or np.random.default_rng(0)
    leaves = list(leaves)
    for t in leaves:
        t.zero_grad()
    out = fn()
    backward(out)
    if not np.isfinite(out.data).all():
        return float("inf")
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in leaves]
    worst = 0.0
    for t, ga in zip(leaves, analytic):
        flat = t.data.ravel()
        n = flat.size
        coords = (range(n) if n <= max_coords
                  else rng.choice(n, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn().data.item()
            flat[i] = orig - eps
            fm = fn().data.item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            if not (np.isfinite(num) and np.isfinite(ga.ravel()[i])):
                return float("inf")
            worst = max(worst, abs(ga.ravel()[i] - num) / max(1.0, abs(num)))
    return worst


def end_to_end_gradient_error(seed: int, max_coords: int = 12, **toy_kwargs) -> float:
    """Max sampled relative error of the contrastive loss gradient through
    the full nested encoder + prompt encoder on one random toy graph."""
    model, ds, claim = random_toy_instance(seed, **toy_kwargs)

    def loss_fn():
        return model.forward(claim, ds)["loss"]

    return sampled_grad_check(loss_fn, model.parameters(), max_coords=max_coords,
                              rng=np.random.default_rng(seed))
